//! Prompt wording is part of the pipeline contract; any edit to the assets
//! must be deliberate and update these digests.

use sha2::{Digest, Sha256};

use evchain_core::prompt::{bundled_asset_dir, TemplateId, TemplateStore, MAPPING_EXAMPLE_FILE};

const DIGESTS: [(&str, &str); 5] = [
    ("code_gen.txt", "c57d92ae64d29d921cf1f9f37b20e1e1f0de36455916dbbf68e078fab35ca003"),
    ("event_chain_gen.txt", "3ee60e09336558488d4321d32180ff46e69af9896ce8e27335fc7f37be6984af"),
    ("mapping_example.txt", "a0b2d9ef2ef19d90d5f5f3d8fce8eeb0cb2336377e1a4aff54c2386a78a80b90"),
    ("rule_script_gen.txt", "312b351984dcc0acad0c39b1fc35a6dfad402b4b25323b5e88b0b34d621cb428"),
    ("signal_selection.txt", "8beaae2ddca40982fb462025ad01b862777c7c6ddec1feb2c43523c7fd05ef3d"),
];

#[test]
fn assets_are_unchanged() {
    for (file, want) in DIGESTS {
        let bytes = std::fs::read(bundled_asset_dir().join(file)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), want, "{file}");
    }
}

#[test]
fn every_template_loads() {
    let store = TemplateStore::bundled();
    for id in TemplateId::ALL {
        store.load(id).unwrap();
    }
    let mapping = store.mapping_example().unwrap();
    assert!(store.load(TemplateId::CodeGen).unwrap().body.contains(&mapping));
    assert!(bundled_asset_dir().join(MAPPING_EXAMPLE_FILE).exists());
}
