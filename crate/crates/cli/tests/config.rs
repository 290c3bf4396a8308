use proptest::prelude::*;
use ylab::config::{GridParams, InnerChoice, IniDocument, RunManifest};
use ylab::CliError;
use ylab_core::background::{InitialFamily, InnerBoundary};
use ylab_core::domain::GridPolicy;

fn parse(text: &str) -> Result<RunManifest, CliError> {
    RunManifest::parse_str(text, "test.ini", "test")
}

fn config_message(text: &str) -> String {
    match parse(text) {
        Err(CliError::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn minimal_flat_config_fills_defaults() {
    let m = parse("[background]\nname = flat3\n").unwrap();
    assert_eq!(m.run_id, "test");
    assert_eq!(m.grid, GridParams::default());
    assert_eq!(m.initial_data, InitialFamily::Flat);
    assert_eq!(m.flow.t_end, None);
    assert_eq!(m.monitor.every, 1);
    assert_eq!(m.inner_boundary(), InnerBoundary::ZeroFlux);
    assert!(m.artifact_paths.is_empty() && m.created_at.is_none());
    let prepared = m.prepare().unwrap();
    assert_eq!(prepared.flow.t_end, 64.0 * 64.0 / 32.0);
    assert_eq!(prepared.flow.p_list_for(3), vec![1.0, 1.4, 1.5, 1.6, 2.0]);
}

#[test]
fn empty_config_is_valid() {
    assert!(parse("").is_ok());
}

#[test]
fn negative_dt0_fails_validation() {
    let msg = config_message("[flow]\ndt0 = -1\n");
    assert!(msg.contains("dt0"), "{msg}");
}

#[test]
fn unknown_key_reports_its_line() {
    let msg = config_message("[grid]\ndim = 3\n\n[flow]\ndt0 = 0.01\ndtmax = 2\n");
    assert!(msg.contains("test.ini:6") && msg.contains("flow.dtmax"), "{msg}");
}

#[test]
fn unknown_section_and_malformed_lines_are_rejected() {
    assert!(config_message("[grid]\n[solver]\n").contains("test.ini:2"));
    assert!(config_message("[grid]\nintervals 12\n").contains("test.ini:2"));
    assert!(config_message("[grid]\nintervals = 12\nintervals = 14\n").contains("duplicate"));
    assert!(config_message("[grid]\nintervals = many\n").contains("grid.intervals"));
}

#[test]
fn parameters_of_another_family_are_unknown_keys() {
    let msg = config_message("[initial]\nfamily = schwarzschild\nm = 1\neps = 0.2\n[grid]\nr_in = 0.5\n");
    assert!(msg.contains("initial.eps") && msg.contains(":4"), "{msg}");
}

#[test]
fn invalid_grid_and_background_fail_before_compute() {
    assert!(config_message("[grid]\nr_in = 2\n").contains("r_in"));
    assert!(config_message("[background]\nname = sphere\n").contains("sphere"));
    assert!(config_message("[background]\nname = flat4\n").contains("dimension"));
    assert!(config_message("[initial]\nfamily = schwarzschild\n").contains("r_in"));
}

#[test]
fn schwarzschild_on_a_punctured_grid_uses_the_minimal_sphere() {
    let m = parse("[grid]\nr_in = 0.5\n[initial]\nfamily = schwarzschild\n").unwrap();
    assert_eq!(m.inner_boundary(), InnerBoundary::MinimalSphere);
    let m = parse("[grid]\nr_in = 0.5\n[background]\ninner = zero-flux\n[initial]\nfamily = schwarzschild\n").unwrap();
    assert_eq!(m.inner_boundary(), InnerBoundary::ZeroFlux);
}

#[test]
fn comments_and_optional_values() {
    let m = parse(
        "# lab run\nrun_id = a-1 ; inline\n[flow]\nt_end = horizon\nmax_u_cap = none\nmax_steps = 7\n[monitor]\np_list = 1.5, 2\n",
    )
    .unwrap();
    assert_eq!(m.run_id, "a-1");
    assert_eq!((m.flow.t_end, m.flow.max_u_cap, m.flow.max_steps), (None, None, Some(7)));
    assert_eq!(m.monitor.p_list, Some(vec![1.5, 2.0]));
}

#[test]
fn run_ids_must_be_path_safe() {
    assert!(config_message("run_id = ../x\n").contains("run_id"));
}

#[test]
fn programmatic_overrides_replace_values() {
    let mut doc = IniDocument::parse("[background]\nname = flat\n", "t").unwrap();
    doc.set("background", "name", "synthetic:A=-50,rc=2");
    let m = RunManifest::from_document(doc, "t", "x").unwrap();
    assert_eq!(m.background.name, "synthetic:A=-50,rc=2");
}

fn family() -> impl Strategy<Value = InitialFamily> {
    prop_oneof![
        Just(InitialFamily::Flat),
        (0.01f64..2.0).prop_map(|m| InitialFamily::Schwarzschild { m }),
        (-0.5f64..0.5, 0.1f64..4.0).prop_map(|(eps, sigma)| InitialFamily::GaussianBump { eps, sigma }),
        (0.0f64..1e-2, 0.1f64..4.0).prop_map(|(eps, s0)| InitialFamily::HeatKernel { eps, s0 }),
        (0.0f64..3.0, 0.5f64..4.0).prop_map(|(a, r)| InitialFamily::Newtonian { a, radius: Some(r) }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn serialization_round_trips(
        fam in family(),
        intervals in 32usize..256,
        r_max in 40.0f64..200.0,
        uniform in any::<bool>(),
        dt0 in 1e-5f64..1e-2,
        growth in 1.0f64..1e6,
        safety in 1.0f64..1.5,
        t_end in proptest::option::of(0.1f64..100.0),
        cap in proptest::option::of(2.0f64..1e6),
        every in 1usize..20,
        ckpt in 0usize..20,
        amp in -60.0f64..1.0,
        p_list in proptest::option::of(proptest::collection::vec(1.0f64..3.0, 1..5)),
    ) {
        let r_in = if matches!(fam, InitialFamily::Schwarzschild { .. }) { 0.5 } else { 0.0 };
        let policy = if uniform { "uniform" } else { "log-stretched" };
        let mut text = format!(
            "run_id = prop\n[grid]\nr_in = {r_in:?}\nr_max = {r_max:?}\nintervals = {intervals}\npolicy = {policy}\n\
             [background]\nname = synthetic:A={amp:?},rc=1,sigma=1,tau=1\n\
             [flow]\ndt0 = {dt0:?}\ndt_max = {:?}\nsafety = {safety:?}\n",
            dt0 * growth
        );
        if let Some(t) = t_end { text.push_str(&format!("t_end = {t:?}\n")); }
        if let Some(c) = cap { text.push_str(&format!("max_u_cap = {c:?}\n")); }
        text.push_str(&format!("[monitor]\nevery = {every}\ncheckpoint_every = {ckpt}\n"));
        if let Some(p) = &p_list {
            let joined: Vec<String> = p.iter().map(|x| format!("{x:?}")).collect();
            text.push_str(&format!("p_list = {}\n", joined.join(", ")));
        }
        let base = parse(&text).unwrap();
        let mut manifest = base.clone();
        manifest.initial_data = fam;
        manifest.grid.policy = if uniform { GridPolicy::Uniform } else { GridPolicy::LogStretched };
        manifest.background.inner = InnerChoice::Auto;
        let ini = manifest.to_ini();
        let back = parse(&ini).unwrap();
        prop_assert_eq!(&back, &manifest);
        prop_assert_eq!(back.to_ini(), ini);
    }
}
