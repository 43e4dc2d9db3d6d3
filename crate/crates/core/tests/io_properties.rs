mod common;

use proptest::prelude::*;

use common::{bundled, data_dir, load, three_path_scenario};
use thermonet::io::*;

#[test]
fn bundled_networks_round_trip() {
    for (name, model) in bundled() {
        let text = serialize_network(&model.description).unwrap();
        let again = parse_network(&text, &name).unwrap();
        assert_eq!(again, model.description, "{name}");
        assert_eq!(serialize_network(&again).unwrap(), text, "{name}");
    }
}

#[test]
fn scenario_binds_and_converts_units() {
    let model = load("three_path.toml");
    let file = three_path_scenario(0.01);
    let s = file.to_scenario(&model, None).unwrap();
    assert_eq!(s.dt, 1.0);
    assert_eq!(s.steps[3].source, bar_to_pa(file.source_values[3]));
    let v2 = model.link_index("v2").unwrap();
    assert_eq!(s.steps[0].valve_openings[v2], 0.0);
    // links without a valve keep the neutral signal
    assert_eq!(s.steps[0].valve_openings[model.link_index("feed").unwrap()], 1.0);

    let mut bad = file.clone();
    bad.valves[0].0 = "feed".into();
    assert!(bad.to_scenario(&model, None).unwrap_err().to_string().contains("no valve"));
    assert!(file.to_scenario(&model, Some(2.0)).is_err());
}

#[test]
fn scenario_file_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let file = three_path_scenario(0.05);
    file.write(&path).unwrap();
    assert_eq!(read_scenario(&path).unwrap(), file);
}

#[test]
fn network_diagnostics_name_the_file() {
    let path = data_dir().join("three_path.toml");
    let text = std::fs::read_to_string(&path).unwrap().replace("kind = \"junction\"", "kind = \"tank\"");
    let err = parse_network(&text, "bench.toml").unwrap_err();
    let msg = err.to_string();
    assert!(err.is_parse() && msg.contains("bench.toml line"), "{msg}");
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1.0f64..1.0, Just(0.0), any::<f64>().prop_filter("finite", |v| v.is_finite())]
}

proptest! {
    #[test]
    fn scenario_parse_serialize_parse_is_identical(
        rows in 1usize..20,
        dt in prop_oneof![Just(1.0), Just(0.5), Just(10.0)],
        t0 in prop_oneof![Just(0.0), Just(100.0)],
        values in prop::collection::vec((0.5f64..5.0, 0.0f64..100.0, -20.0f64..40.0, 0.0f64..=1.0, 0.0f64..=1.0), 20),
        flow in any::<bool>(),
    ) {
        let time: Vec<f64> = (0..rows).map(|k| t0 + k as f64 * dt).collect();
        let v = &values[..rows];
        let file = ScenarioFile {
            source: if flow { SourceColumn::Flow } else { SourceColumn::Head },
            source_values: v.iter().map(|x| x.0).collect(),
            inlet_temperature: v.iter().map(|x| x.1).collect(),
            ambient_temperature: v.iter().map(|x| x.2).collect(),
            valves: vec![("a".into(), v.iter().map(|x| x.3).collect())],
            demands: vec![("n".into(), v.iter().map(|x| x.4).collect())],
            time,
        };
        let text = String::from_utf8(file.to_csv().unwrap()).unwrap();
        let parsed = parse_scenario(&text, "mem").unwrap();
        prop_assert_eq!(&parsed, &file);
        prop_assert_eq!(parsed.to_csv().unwrap(), text.into_bytes());
    }

    #[test]
    fn results_values_survive_text_bit_exactly(values in prop::collection::vec(finite(), 1..40)) {
        let table = ResultsTable {
            columns: vec!["time".into(), "x".into()],
            rows: values.iter().enumerate().map(|(k, &v)| vec![k as f64, v]).collect(),
        };
        let text = String::from_utf8(table.to_csv().unwrap()).unwrap();
        let back = parse_results(&text, "mem").unwrap();
        for (a, b) in back.rows.iter().zip(&table.rows) {
            prop_assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }

    #[test]
    fn unit_maps_are_linear(x in -1e3f64..1e3, y in -1e3f64..1e3) {
        prop_assert_eq!(bar_to_pa(x), x * 1e5);
        prop_assert_eq!(lpm_to_m3s(x), x / 60000.0);
        let lhs = m3s_to_lpm(x + y);
        let rhs = m3s_to_lpm(x) + m3s_to_lpm(y);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (x.abs() + y.abs()) * 60000.0);
    }

    #[test]
    fn metrics_scale_invariance(scale in 0.1f64..10.0, offset in 0.1f64..5.0) {
        let y: Vec<f64> = (0..50).map(|k| 40.0 + (k as f64 * 0.3).sin()).collect();
        let p: Vec<f64> = y.iter().map(|v| v + offset).collect();
        let a = compute_metrics(&y, &p).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let ps: Vec<f64> = p.iter().map(|v| v * scale).collect();
        let b = compute_metrics(&ys, &ps).unwrap();
        prop_assert!((a.mean_relative_error - b.mean_relative_error).abs() <= 1e-9 * a.mean_relative_error);
        prop_assert!((a.max_abs_error - offset).abs() <= 1e-12 * 50.0);
    }
}
