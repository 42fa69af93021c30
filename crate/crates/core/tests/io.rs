use std::fs;
use std::path::{Path, PathBuf};

use hpgee2::io::{dataset_csv, load_dataset, write_dataset};
use hpgee2::simulate::simulate_dataset;
use hpgee2::{Error, StudyConfig};

fn small_config() -> StudyConfig {
    StudyConfig {
        n_clusters: 12,
        cluster_size: 4,
        ..StudyConfig::default()
    }
}

fn write_pair(dir: &Path, units: &str, pairs: &str) -> (PathBuf, PathBuf) {
    let (u, p) = (dir.join("units.csv"), dir.join("pairs.csv"));
    fs::write(&u, units).unwrap();
    fs::write(&p, pairs).unwrap();
    (u, p)
}

const UNITS: &str = "cluster_id,unit_id,y,x1\nc1,a,1,0.5\nc1,b,0,-1\nc1,c,1,2\nc2,a,0,1.5\n";
const PAIRS: &str = "cluster_id,unit_j,unit_k,w1\nc1,a,b,0.1\nc1,c,a,0.2\nc1,b,c,0.3\n";

#[test]
fn simulated_data_round_trips_exactly() {
    let ds = simulate_dataset(&small_config(), 3).unwrap().dataset;
    let dir = tempfile::tempdir().unwrap();
    let (u, p) = (dir.path().join("u.csv"), dir.path().join("p.csv"));
    write_dataset(&ds, &u, &p, "# seed=3\n").unwrap();
    let back = load_dataset(&u, &p, true).unwrap();
    assert_eq!(back, ds);
    assert_eq!(dataset_csv(&back), dataset_csv(&ds));
}

#[test]
fn pairs_are_placed_in_lexicographic_order() {
    let dir = tempfile::tempdir().unwrap();
    let (u, p) = write_pair(dir.path(), UNITS, PAIRS);
    let ds = load_dataset(&u, &p, true).unwrap();
    let c1 = &ds.clusters()[0];
    assert_eq!(c1.pairs, vec![(0, 1), (0, 2), (1, 2)]);
    // (c, a) is stored at position (a, c); column 0 is the intercept.
    assert_eq!(c1.z.column(1).as_slice(), &[0.1, 0.2, 0.3]);
    assert_eq!(c1.z.column(0).as_slice(), &[1.0, 1.0, 1.0]);
    assert_eq!(ds.mean_names(), &["(Intercept)".to_string(), "x1".to_string()]);
    // The singleton cluster needs no pair rows.
    assert_eq!(ds.clusters()[1].n_pairs(), 0);
}

#[test]
fn no_intercept_keeps_columns_as_given() {
    let dir = tempfile::tempdir().unwrap();
    let (u, p) = write_pair(dir.path(), UNITS, PAIRS);
    let ds = load_dataset(&u, &p, false).unwrap();
    assert_eq!((ds.p(), ds.q()), (1, 1));
    assert!(!ds.has_intercept());
}

fn parse_failure(units: &str, pairs: &str) -> (PathBuf, u64, String) {
    let dir = tempfile::tempdir().unwrap();
    let (u, p) = write_pair(dir.path(), units, pairs);
    match load_dataset(&u, &p, true).unwrap_err() {
        Error::Parse { file, line, detail } => (PathBuf::from(file), line, detail),
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn unknown_unit_names_the_line() {
    let pairs = "cluster_id,unit_j,unit_k,w1\nc1,a,b,0.1\nc1,a,zz,0.2\nc1,b,c,0.3\n";
    let (file, line, detail) = parse_failure(UNITS, pairs);
    assert!(file.ends_with("pairs.csv"));
    assert_eq!(line, 3);
    assert!(detail.contains("unknown unit 'zz'"), "{detail}");
}

#[test]
fn missing_and_duplicate_pairs_are_rejected() {
    let missing = "cluster_id,unit_j,unit_k,w1\nc1,a,b,0.1\nc1,b,c,0.3\n";
    let (_, _, detail) = parse_failure(UNITS, missing);
    assert!(detail.contains("missing pair (a, c)"), "{detail}");

    let duplicate = "cluster_id,unit_j,unit_k,w1\nc1,a,b,0.1\nc1,b,a,0.2\nc1,b,c,0.3\nc1,a,c,0.3\n";
    let (_, line, detail) = parse_failure(UNITS, duplicate);
    assert_eq!(line, 3);
    assert!(detail.contains("duplicate pair"), "{detail}");
}

#[test]
fn malformed_unit_rows_are_rejected() {
    let bad_y = "cluster_id,unit_id,y,x1\nc1,a,2,0.5\n";
    let (file, line, detail) = parse_failure(bad_y, PAIRS);
    assert!(file.ends_with("units.csv"));
    assert_eq!(line, 2);
    assert!(detail.contains("not binary"), "{detail}");

    let bad_x = "cluster_id,unit_id,y,x1\nc1,a,1,abc\n";
    let (_, _, detail) = parse_failure(bad_x, PAIRS);
    assert!(detail.contains("x1"), "{detail}");

    let dup_unit = "cluster_id,unit_id,y,x1\nc1,a,1,0\nc1,a,0,1\n";
    let (_, line, detail) = parse_failure(dup_unit, PAIRS);
    assert_eq!(line, 3);
    assert!(detail.contains("duplicate unit"), "{detail}");
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let absent = dir.path().join("absent.csv");
    assert!(matches!(load_dataset(&absent, &absent, true), Err(Error::Io { .. })));
}

#[test]
fn failed_second_write_leaves_no_partial_output() {
    let ds = simulate_dataset(&small_config(), 1).unwrap().dataset;
    let dir = tempfile::tempdir().unwrap();
    let u = dir.path().join("u.csv");
    let p = dir.path().join("missing_dir").join("p.csv");
    assert!(write_dataset(&ds, &u, &p, "").is_err());
    assert!(!u.exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}
