//! The example configuration files shipped with the repository.

use std::path::PathBuf;

use coarsematte::degrade::DegradeSpec;
use coarsematte::train::TrainConfig;

fn repo_file(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn desk_config_matches_the_desk_preset() {
    let c = TrainConfig::load(repo_file("desk.tsv")).unwrap();
    c.validate().unwrap();
    let mut want = TrainConfig::desk((64, 64));
    want.mpn.batch = 4;
    want.qun.batch = 4;
    want.mpn.epochs = 25;
    want.qun.epochs = 30;
    want.mrn.epochs = 12;
    want.patience = 0;
    assert_eq!(c.to_text(), want.to_text());
}

#[test]
fn degrade_config_spells_out_the_defaults() {
    assert_eq!(DegradeSpec::load(repo_file("degrade.tsv")).unwrap(), DegradeSpec::default());
}
