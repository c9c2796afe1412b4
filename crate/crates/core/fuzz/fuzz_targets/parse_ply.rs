#![no_main]

use cmcsweep::io::{map_from_ply, parse_ply, write_ply};
use cmcsweep::metric::MetricModel;
use libfuzzer_sys::fuzz_target;
use std::sync::Arc;

fuzz_target!(|data: &[u8]| {
    let Ok(mesh) = parse_ply(data) else { return };
    // Anything that parses must survive a round trip.
    if let Ok(bytes) = write_ply(&mesh) {
        let back = parse_ply(&bytes).expect("re-parse of written PLY");
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        assert_eq!(back.faces, mesh.faces);
    }
    if mesh.vertices.len() <= 5000 {
        let _ = map_from_ply(&mesh, Arc::new(MetricModel::round_s3()));
    }
});
