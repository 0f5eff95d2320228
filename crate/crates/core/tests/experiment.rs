use dladf::data::{read_dataset, write_dataset};
use dladf::eval::{run_experiment, ExperimentGrid, MethodId, AGGREGATES_HEADER, CELLS_HEADER};
use dladf::synthgen::{generate, SynthConfig};

fn small_grid(l_values: Vec<f64>, seeds: Vec<u64>, methods: Vec<MethodId>) -> ExperimentGrid {
    let synth = SynthConfig {
        n: 2000,
        p: 8,
        ..SynthConfig::default()
    };
    let mut grid = ExperimentGrid::new(synth, l_values, seeds, methods);
    for cfg in grid.train.values_mut() {
        cfg.batch_size = 256;
        cfg.max_epochs = 15;
    }
    grid
}

#[test]
fn full_benchmark_grid_has_two_hundred_cells() {
    let grid = ExperimentGrid::new(
        SynthConfig::default(),
        vec![0.5, 1.0, 2.0, 4.0],
        (1..=10).collect(),
        MethodId::ALL.to_vec(),
    );
    assert_eq!(grid.n_cells(), 5 * 4 * 10);
}

#[test]
fn single_cell_grid_writes_one_row() {
    let table = run_experiment(&small_grid(vec![1.0], vec![3], vec![MethodId::Oracle]), 1).unwrap();
    let csv = table.cells_csv_string().unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], CELLS_HEADER.join(","));
    assert!(lines[1].starts_with("oracle,1,3,"));
    assert!(lines[1].contains(",1.000000000,"));
    let agg = table.aggregates_csv_string().unwrap();
    assert_eq!(agg.lines().next().unwrap(), AGGREGATES_HEADER.join(","));
}

#[test]
fn reruns_are_byte_identical_regardless_of_workers() {
    let grid = small_grid(vec![0.5, 2.0], vec![1, 2, 3], MethodId::ALL.to_vec());
    let a = run_experiment(&grid, 1).unwrap();
    let b = run_experiment(&grid, 3).unwrap();
    assert_eq!(a.cells_csv_string().unwrap(), b.cells_csv_string().unwrap());
    assert_eq!(a.aggregates_csv_string().unwrap(), b.aggregates_csv_string().unwrap());
    assert_eq!(a.cells.len(), 30);
    for agg in &a.aggregates {
        assert_eq!(agg.n_seeds, 3);
    }
    for c in a.cells.iter().filter(|c| c.method == MethodId::Oracle) {
        assert_eq!(c.relative_log_loss, Some(1.0));
    }
}

#[test]
fn dataset_file_round_trips() {
    let ds = generate(&SynthConfig {
        n: 300,
        p: 6,
        training_period_days: 2.0,
        seed: 17,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut buf = Vec::new();
    write_dataset(&ds, &mut buf).unwrap();
    let loaded = read_dataset(buf.as_slice()).unwrap();
    let header = loaded.header.unwrap();
    assert_eq!(header.config, ds.config);
    assert_eq!(header.coefficients, ds.coefficients);
    assert_eq!(loaded.data, dladf::data::TrainingData::from(&ds));

    let mut again = Vec::new();
    write_dataset(&ds, &mut again).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn minimal_records_load_without_ground_truth() {
    let text = "{\"x\":[0.5,-1.0],\"e\":0.25,\"y_obs\":1}\n{\"x\":[1.5,2.0],\"e\":1.0,\"y_obs\":0}\n";
    let loaded = read_dataset(text.as_bytes()).unwrap();
    assert!(loaded.header.is_none());
    let d = loaded.data;
    assert_eq!((d.len(), d.dim()), (2, 2));
    assert!(d.y_true.is_none() && d.theta_true.is_none());
    assert!(d.require_delays().is_err());

    let unknown = "{\"x\":[0.5],\"e\":0.25,\"y_obs\":1,\"z\":3}\n";
    assert!(read_dataset(unknown.as_bytes()).is_err());
}
