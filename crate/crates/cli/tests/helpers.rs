use wmar_cli::{aggregate_curve_rows, chart, extract_overrides, parse_sets, CurveRow};

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn dotted_flags_become_overrides() {
    let (rest, ov) = extract_overrides(strings(&[
        "wmar", "run", "--config", "a.cfg", "--budget.N", "300", "--wm.lr=0.01", "--jobs", "2",
    ]))
    .unwrap();
    assert_eq!(rest, strings(&["wmar", "run", "--config", "a.cfg", "--jobs", "2"]));
    assert_eq!(
        ov,
        vec![("budget.N".to_string(), "300".to_string()), ("wm.lr".to_string(), "0.01".to_string())]
    );
    assert!(extract_overrides(strings(&["wmar", "--budget.N"])).is_err());
    assert_eq!(parse_sets(&strings(&["a.b = 1"])).unwrap(), vec![("a.b".into(), "1".into())]);
    assert_eq!(parse_sets(&strings(&["nokey"])).unwrap_err().exit_code(), 2);
}

fn row(seed: u64, step: u64, task: &str, score: f64) -> CurveRow {
    CurveRow {
        model: "wmar".into(),
        seed,
        global_step: step,
        task_trained: "a".into(),
        eval_task: task.into(),
        score,
    }
}

#[test]
fn aggregation_takes_quartiles_over_seeds() {
    let rows: Vec<CurveRow> = (0..5)
        .flat_map(|s| [row(s, 0, "b", s as f64), row(s, 0, "a", 10.0), row(s, 10, "b", 2.0 * s as f64)])
        .collect();
    let agg = aggregate_curve_rows(&rows).unwrap();
    assert_eq!(agg.len(), 3);
    // tasks keep their first-appearance order
    assert_eq!(agg[0].eval_task, "b");
    assert_eq!((agg[0].median, agg[0].q25, agg[0].q75, agg[0].seeds), (2.0, 1.0, 3.0, 5));
    assert_eq!(agg[1].median, 4.0);
    assert_eq!(agg[2].eval_task, "a");

    let series = chart::series(agg.iter());
    assert_eq!(series.len(), 2);
    let svg = chart::render(&series, "t & <u>");
    assert!(svg.contains("t &amp; &lt;u&gt;"));
    assert_eq!(svg.matches(">b<").count(), 1);
}
