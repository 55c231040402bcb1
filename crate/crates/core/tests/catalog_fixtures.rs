use std::fs;
use std::path::PathBuf;

use evchain_core::retrieval::{retrieve_top_k, validate_signals, LexicalEmbedder};
use evchain_core::vss::{flatten_catalog, kb_file, parse_kb, parse_vss_json, Catalog, SignalKind};

fn fixture(name: &str) -> String {
    fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)).unwrap()
}

fn catalog() -> Catalog {
    parse_vss_json(&fixture("vss_catalog.json")).unwrap()
}

#[test]
fn sixty_four_entries_round_trip() {
    let c = catalog();
    assert_eq!(c.len(), 64);
    let lines = flatten_catalog(&c);
    assert_eq!(lines.len(), 64);
    let body = kb_file(&lines);
    assert!(!body.contains('\r'));
    let back = parse_kb(body.lines()).unwrap();
    let key = |c: &Catalog| c.entries().iter().map(|e| (e.path.clone(), e.kind, e.accessors.clone())).collect::<Vec<_>>();
    assert_eq!(key(&back), key(&c));
    let hazard = c.lookup("Vehicle.Body.Lights.Hazard").unwrap();
    assert_eq!(hazard.kind, SignalKind::Actuator);
    assert_eq!(lines[c.position("Vehicle.Body.Lights.Hazard").unwrap()], "Vehicle.Body.Lights.Hazard,actuator,get_hazard(); set_hazard(bool),Hazard warning lights flashing, all direction indicators blink");
}

#[test]
fn case_study_scenario_finds_hazard() {
    let c = catalog();
    let top = retrieve_top_k(
        "Vehicle should activate hazard lights when camera or LIDAR detects a pedestrian",
        &c,
        10,
        &LexicalEmbedder::default(),
    )
    .unwrap();
    assert!(top.iter().any(|r| r.entry.path == "Vehicle.Body.Lights.Hazard"));
}

#[test]
fn adversarial_paths_are_all_rejected() {
    let c = catalog();
    let paths: Vec<String> = fixture("adversarial_paths.txt")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(str::to_string)
        .collect();
    assert_eq!(paths.len(), 50);
    let v = validate_signals(&paths, &c);
    assert!(v.valid.is_empty(), "{:?}", v.valid);
    assert_eq!(v.rejected.len(), 50);
}
