use proptest::prelude::*;
use rmps_core::experiments::{ExperimentReport, ExperimentSpec, ExperimentKind, SweepPoint, Sweep};
use rmps_lab_cli::config::{BoundaryChoice, ExperimentConfig, ObservableChoice, PartialConfig};
use rmps_lab_cli::plot::{data_rows, emit_plot_script};

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    let kind = prop_oneof![
        Just("max-entropy"),
        Just("local-obs"),
        Just("frame-potential"),
        Just("norm-concentration"),
        Just("extensivity"),
        Just("equilibration"),
    ];
    (kind, 2usize..4, 1usize..4, 2usize..100_000, any::<u64>(), 0.01f64..1.0, any::<bool>(), prop::collection::vec(1usize..4, 0..3))
        .prop_map(|(kind, d, bond, samples, seed, eps, open, sweep_bond)| {
            let n = 6;
            let mut p = PartialConfig {
                kind: Some(kind.into()),
                d: Some(d),
                n: Some(n),
                bond_dim: Some(bond),
                samples: Some(samples),
                seed: Some(seed),
                boundary: Some(if open { BoundaryChoice::Open } else { BoundaryChoice::Periodic }),
                ..Default::default()
            };
            match kind {
                "max-entropy" => {
                    p.l = Some(2);
                    p.sweep_bond = Some(sweep_bond);
                }
                "extensivity" => {
                    p.k = Some(3);
                    p.sweep_n = Some(vec![9, 12]);
                }
                "norm-concentration" => p.epsilon = Some(eps),
                "local-obs" if d == 2 => {
                    p.observable = Some(ObservableChoice::Matrix { re: vec![vec![eps, 0.3], vec![0.3, -eps]], im: Some(vec![vec![0.0, 0.1], vec![-0.1, 0.0]]) })
                }
                _ => {}
            }
            ExperimentConfig::from_partial(p).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parse_of_serialize_is_identity(cfg in arb_config()) {
        prop_assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg.clone());
        let json = serde_json::to_string(&cfg.to_partial()).unwrap();
        let back: PartialConfig = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(ExperimentConfig::from_partial(back).unwrap(), cfg);
    }
}

fn report_with(points: Vec<SweepPoint>) -> ExperimentReport {
    let spec = ExperimentSpec::new(ExperimentKind::Extensivity, 2, 4, 2, 10, 0);
    ExperimentReport {
        kind: "extensivity".into(),
        config: spec,
        seed: 0,
        wall_clock_seconds: 0.0,
        records: Vec::new(),
        sweep: Some(Sweep { x_label: "n/k".into(), y_label: "S_2".into(), points }),
        histograms: Vec::new(),
        pass: true,
        samples: Vec::new(),
    }
}

#[test]
fn single_point_plot_has_reference_lines() {
    let r = report_with(vec![SweepPoint { x: 4.0, mean: 0.5, stderr: 0.01, exact: Some(0.51), bound: Some(0.6) }]);
    let script = emit_plot_script(&r).unwrap();
    assert_eq!(data_rows(&script), 1);
    assert!(script.contains("title 'exact'") && script.contains("title 'bound'"));
}

#[test]
fn empty_sweep_is_refused() {
    let mut r = report_with(Vec::new());
    assert!(emit_plot_script(&r).unwrap_err().to_string().contains("no sweep points"));
    r.sweep = None;
    assert!(emit_plot_script(&r).is_err());
}
