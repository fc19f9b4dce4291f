use reflectool_web::{calculate, inspect, rank, Calculation};

const DOCS: &str = "renal dose of amikacin\n\nwarfarin and vitamin k\namikacin amikacin peak level\n";

#[test]
fn ranking_skips_blank_lines_and_explains_scores() {
    let r = rank(DOCS, "amikacin dose", 1.5, 0.75, 5);
    assert_eq!(r.query_tokens, ["amikacin", "dose"]);
    assert_eq!(r.results.len(), 3);
    assert_eq!(r.results[0].index, 0);
    for hit in &r.results {
        let sum: f64 = hit.terms.iter().map(|t| t.contribution).sum();
        assert!((sum - hit.score).abs() < 1e-12);
    }
    assert_eq!(r.results[2].score, 0.0);
}

#[test]
fn parameters_change_ranking() {
    // With no length normalisation the doubled term wins outright.
    let flat = rank(DOCS, "amikacin", 1.5, 0.0, 1);
    assert_eq!(flat.results[0].index, 2);
    assert_eq!(flat.results[0].terms[0].tf, 2);
    assert_eq!(rank(DOCS, "amikacin", 1.5, 0.75, 1).results.len(), 1);
}

#[test]
fn calculator_results() {
    assert_eq!(calculate("2^3^2"), Calculation::Ok { value: 512.0, display: "512".into() });
    assert!(matches!(calculate("1/0"), Calculation::Error { .. }));
}

#[test]
fn gating_matrix_follows_attachments() {
    let none = inspect("Action: structured_query[input=SELECT COUNT FROM t]", false, false, false);
    assert_eq!(none.parsed.as_ref().unwrap().name, "structured_query");
    assert!(none.verdict.unwrap().contains("no database input"));
    let with_table = inspect("Action: structured_query[input=SELECT COUNT FROM t]", false, true, false);
    assert_eq!(with_table.verdict.as_deref(), Some("ok"));
    let blocked: Vec<&str> = none.matrix.iter().filter(|r| r.verdict != "ok").map(|r| r.tool.as_str()).collect();
    assert_eq!(blocked.len(), 5, "{blocked:?}");
    let open = inspect("x", true, true, true);
    assert!(open.parse_error.is_some());
    assert!(open.matrix.iter().all(|r| r.verdict == "ok"));
}
