use svyacd::io::{dataset_config, run_loaded, Loaded};
use svyacd::simulator::{draw_sample, generate_population, SimConfig};
use svyacd::Method;

fn setting8_sample() -> Loaded {
    let cfg = SimConfig::setting(8).unwrap();
    let pop = generate_population(&cfg, &mut cfg.rng(0)).unwrap();
    let data = draw_sample(&pop, &mut cfg.rng(1)).unwrap().data;
    Loaded {
        rows_read: data.n(),
        dropped: 0,
        group_levels: None,
        expansion: vec![("x".into(), vec![0])],
        data,
    }
}

#[test]
fn setting8_battery_separates_slr() {
    let loaded = setting8_sample();
    let cfg = dataset_config(&loaded.data);
    let report = run_loaded(&cfg, &loaded);
    assert!(!report.any_failed());
    assert_eq!(report.rows.len(), 11);

    let get = |m: Method| {
        let r = report.row(m).unwrap();
        (r.acd.unwrap(), r.se.unwrap())
    };
    let joint = |(a, sa): (f64, f64), (b, sb): (f64, f64)| (a - b).abs() / (sa * sa + sb * sb).sqrt();
    for (i, &m) in Method::PROPOSED.iter().enumerate() {
        for &k in &Method::PROPOSED[i + 1..] {
            assert!(joint(get(m), get(k)) < 3.0, "{m} vs {k}");
        }
        assert!(joint(get(m), get(Method::Slr)) > 3.0, "{m} vs SLR");
    }
    let again = run_loaded(&cfg, &loaded);
    assert_eq!(report.to_json().unwrap(), again.to_json().unwrap());
    assert_eq!(report.to_csv().unwrap(), again.to_csv().unwrap());
}
