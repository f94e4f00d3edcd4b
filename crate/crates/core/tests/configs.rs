use pspp::io::config::{load_config, parse_config, to_toml};

const US: &str = include_str!("../examples/us_investment.toml");

#[test]
fn shipped_us_config_parses() {
    let cfg = parse_config(US).unwrap();
    assert_eq!(cfg.model.discounts.as_deref(), Some(&[0.2, 0.4][..]));
    assert_eq!(cfg.priors.p0_scale, 1000.0);
    assert_eq!(cfg.priors.k0_scale, 0.0);
    let (spec, state) = cfg.filter_setup(2).unwrap();
    assert_eq!(spec.state_dim(), 2);
    assert_eq!(state.m[0], 80.622);
}

#[test]
fn round_trip_through_file() {
    let cfg = parse_config(US).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, to_toml(&cfg).unwrap()).unwrap();
    assert_eq!(load_config(&path).unwrap(), cfg);
}
