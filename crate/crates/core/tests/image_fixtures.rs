//! Golden checks of the extractor against the procedural fixtures.

mod common;

#[test]
fn fixtures_match_truth() {
    let (checked, failures) = common::image_fixture_failures();
    assert!(checked > 50);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn extraction_is_bitwise_deterministic() {
    assert_eq!(common::nondeterministic_fixtures(), Vec::<String>::new());
}
