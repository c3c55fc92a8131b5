use latent_langevin::validate::{self, ValidateOptions, CHECK_NAMES};

#[test]
fn fresh_build_passes_every_check_once() {
    let report = validate::run(ValidateOptions::default()).unwrap();
    for line in report.lines() {
        println!("{line}");
    }
    let names: Vec<&str> = report.checks.iter().map(|c| c.name).collect();
    assert_eq!(names, CHECK_NAMES);
    assert!(report.all_passed());
}

#[test]
fn corrupted_update_fails_stationarity() {
    let report = validate::run(ValidateOptions { corrupt_update: true }).unwrap();
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    assert_eq!(failed, ["langevin_stationarity"]);
}

#[test]
fn hand_built_two_object_reward() {
    assert!((validate::two_object_reward().unwrap() + 0.3).abs() <= 1e-9);
}
