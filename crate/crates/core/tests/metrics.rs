mod support;

#[test]
fn worked_metric_examples() {
    let mut failed = Vec::new();
    for (name, r) in support::metric_suite() {
        if let Err(e) = r {
            failed.push(format!("{name}: {e}"));
        }
    }
    assert!(failed.is_empty(), "{failed:#?}");
}
