use std::path::PathBuf;

use densescan::model_io::{load_model_prefix, parse_manifest};
use densescan::nnet::mininet;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn mininet_fixture_matches_seeded_constructor() {
    let net = load_model_prefix(fixture("mininet")).unwrap();
    let g = net.geometry().unwrap();
    assert_eq!((g.window, g.stride, g.valid), (35, 4, true));
    assert_eq!(net, mininet::mininet(1));
}

#[test]
fn alexnet_manifest_geometry() {
    let text = std::fs::read_to_string(fixture("alexnet.manifest")).unwrap();
    let m = parse_manifest(&text, "alexnet.manifest").unwrap();
    assert_eq!(m.input_channels, 3);
    assert_eq!(m.layers.len(), 21);
    // parameters of the five conv and three fc layers
    let params: u64 = m.layers.iter().filter_map(|(_, s)| s.map(|s| s.count)).sum();
    assert_eq!(params, 58_289_538);
    assert_eq!(m.blob_bytes, 4 * params);
    let specs: Vec<_> = m.layers.iter().map(|(s, _)| s.clone()).collect();
    let g = densescan::nnet::receptive_geometry(&specs).unwrap();
    // padded conv layers make the geometry nominal
    assert_eq!((g.window, g.stride, g.valid), (227, 32, false));
}
