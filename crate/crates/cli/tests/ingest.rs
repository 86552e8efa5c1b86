//! Ingestion edge cases and the pivot round trip.

use std::io::Write;

use mosaic_cli::ingest::{export_long_csv, ingest, merge_clusters, IngestOptions};
use tempfile::NamedTempFile;

fn write_csv(content: &str) -> NamedTempFile {
    let mut file = NamedTempFile::new().unwrap();
    file.write_all(content.as_bytes()).unwrap();
    file.flush().unwrap();
    file
}

fn default_options() -> IngestOptions {
    IngestOptions::default()
}

#[test]
fn pivots_a_complete_two_by_two_panel() {
    let file = write_csv(
        "unit,time,y,x_a,cluster\n\
         a,1,1.0,0.1,c1\n\
         a,2,2.0,0.2,c1\n\
         b,1,3.0,0.3,c2\n\
         b,2,4.0,0.4,c2\n",
    );
    let data = ingest(file.path(), &default_options()).unwrap();
    assert_eq!(data.n_units(), 2);
    assert_eq!(data.n_times(), 2);
    assert_eq!(data.y[(0, 0)], 1.0);
    assert_eq!(data.y[(1, 1)], 4.0);
    assert_eq!(data.x.len(), 1);
    assert_eq!(data.x_names, vec!["x_a"]);
    assert_eq!(data.clustering.n_clusters(), 2);
    assert!(data.cluster_warning.is_none());
}

#[test]
fn missing_cell_is_named() {
    let file = write_csv(
        "unit,time,y\n\
         u1,1,1.0\n\
         u1,2,2.0\n\
         u2,1,3.0\n",
    );
    let err = ingest(file.path(), &default_options()).unwrap_err();
    assert_eq!(err.code, 2);
    assert!(err.message.contains("unbalanced"), "{}", err.message);
    assert!(err.message.contains("(u2, 2)"), "{}", err.message);
}

#[test]
fn duplicate_cell_is_rejected() {
    let file = write_csv(
        "unit,time,y\n\
         u1,1,1.0\n\
         u1,1,1.5\n\
         u2,1,3.0\n",
    );
    let err = ingest(file.path(), &default_options()).unwrap_err();
    assert!(err.message.contains("duplicate cell"), "{}", err.message);
}

#[test]
fn cluster_varying_within_unit_is_rejected() {
    let file = write_csv(
        "unit,time,y,cluster\n\
         u1,1,1.0,c1\n\
         u1,2,2.0,c2\n\
         u2,1,3.0,c2\n\
         u2,2,4.0,c2\n",
    );
    let err = ingest(file.path(), &default_options()).unwrap_err();
    assert!(err.message.contains("clusters"), "{}", err.message);
}

#[test]
fn missing_cluster_column_defaults_to_units_with_warning() {
    let file = write_csv(
        "unit,time,y\n\
         u1,1,1.0\n\
         u1,2,2.0\n\
         u2,1,3.0\n\
         u2,2,4.0\n",
    );
    let data = ingest(file.path(), &default_options()).unwrap();
    assert_eq!(data.clustering.n_clusters(), 2);
    assert!(data.cluster_warning.is_some());
}

#[test]
fn numeric_time_labels_sort_numerically() {
    // Lexicographic order would put "10" before "2".
    let file = write_csv(
        "unit,time,y\n\
         u1,2,1.0\n\
         u1,10,2.0\n\
         u2,2,3.0\n\
         u2,10,4.0\n",
    );
    let data = ingest(file.path(), &default_options()).unwrap();
    assert_eq!(data.time_ids, vec!["2", "10"]);
    assert_eq!(data.y[(0, 1)], 2.0);
}

#[test]
fn unit_fe_appends_time_constant_dummies() {
    let file = write_csv(
        "unit,time,y\n\
         u1,1,1.0\n\
         u1,2,2.0\n\
         u2,1,3.0\n\
         u2,2,4.0\n\
         u3,1,5.0\n\
         u3,2,6.0\n",
    );
    let data = ingest(
        file.path(),
        &IngestOptions {
            unit_fe: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(data.x.len(), 3);
    for (i, dummy) in data.x.iter().enumerate() {
        for r in 0..3 {
            let expected = if r == i { 1.0 } else { 0.0 };
            assert_eq!(dummy[(r, 0)], expected);
            assert_eq!(dummy[(r, 1)], expected, "dummies must be constant over time");
        }
    }
    assert!(data.x_names.iter().all(|n| n.starts_with("fe_unit_")));
}

#[test]
fn z_column_is_split_from_controls() {
    let file = write_csv(
        "unit,time,y,z,x_a\n\
         u1,1,1.0,9.0,0.1\n\
         u1,2,2.0,8.0,0.2\n\
         u2,1,3.0,7.0,0.3\n\
         u2,2,4.0,6.0,0.4\n",
    );
    let data = ingest(file.path(), &default_options()).unwrap();
    let z = data.z.as_ref().unwrap();
    assert_eq!(z[(0, 0)], 9.0);
    assert_eq!(data.x.len(), 1);
}

#[test]
fn round_trip_through_export_is_identity() {
    let file = write_csv(
        "unit,time,y,z,x_a,cluster\n\
         b,2,4.0,0.5,-1.0,c2\n\
         a,1,1.0,0.25,2.0,c1\n\
         b,1,3.0,0.125,3.5,c2\n\
         a,2,2.0,0.0625,-0.5,c1\n",
    );
    let first = ingest(file.path(), &default_options()).unwrap();
    let exported = export_long_csv(&first);
    let file2 = write_csv(&exported);
    let second = ingest(file2.path(), &default_options()).unwrap();

    assert_eq!(first.unit_ids, second.unit_ids);
    assert_eq!(first.time_ids, second.time_ids);
    assert_eq!(first.y, second.y);
    assert_eq!(first.z, second.z);
    assert_eq!(first.x, second.x);
    assert_eq!(first.clustering.assignment(), second.clustering.assignment());
    // And the export itself is a fixed point.
    assert_eq!(exported, export_long_csv(&second));
}

#[test]
fn merge_clusters_grows_smallest_first() {
    // Sizes 1, 1, 3, 5: merging to min 2 joins the two singletons.
    let assignment = vec![0, 1, 2, 2, 2, 3, 3, 3, 3, 3];
    let clustering = mosaic_core::panel::Clustering::new(assignment).unwrap();
    let labels: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let (merged, merged_labels) = merge_clusters(&clustering, &labels, 2).unwrap();
    assert_eq!(merged.n_clusters(), 3);
    assert!(merged_labels.contains(&"a+b".to_string()));
    assert_eq!(merged.sizes().iter().min(), Some(&2));

    // Never merges below two clusters even with an unreachable minimum.
    let (floor, _) = merge_clusters(&clustering, &labels, 100).unwrap();
    assert_eq!(floor.n_clusters(), 2);
}
