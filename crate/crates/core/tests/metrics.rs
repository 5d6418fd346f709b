#[path = "suites/metrics.rs"]
mod suite;

#[test]
fn bray_curtis_properties_and_branch_subset_reports() {
    println!("{}", suite::run());
}
