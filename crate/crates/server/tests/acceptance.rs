//! End-to-end acceptance checks, one test per requirement.
//!
//! Oracle constants were computed independently with 40-digit arithmetic.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use axum::http::{Method, StatusCode};
use common::{cli_add_study, cli_ok, Api};
use metaforge_core::dotplot::{count_beyond, sampling_quantiles, Direction};
use metaforge_core::effect::{
    log_odds_ratio, mean_difference, risk_difference, standardized_mean_change, standardized_mean_difference,
    ContinuousArm, DichotomousArm,
};
use metaforge_core::form::{AnswerSet, EvidenceRow, QualityAnswer, TableKind, Verdict};
use metaforge_core::meta::{pool_random_effects, pool_with_inclusion, StudyEstimate};
use metaforge_core::model::{
    self, Annotation, AnnotationKind, Citation, Project, Region, ResearchQuestion, ReviewStatus, Scope,
};
use metaforge_core::normal;
use metaforge_core::triage::{Choice, GroupEdit, Placement, TriageAction};
use metaforge_core::EffectKind;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const SEED: u64 = 0x6d65_7461;
const CASES: usize = 1000;

fn rel(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

fn studies(ys: &[f64], vs: &[f64]) -> Vec<StudyEstimate> {
    ys.iter()
        .zip(vs)
        .enumerate()
        .map(|(i, (&y, &v))| StudyEstimate::new(format!("s{i}"), EffectKind::HedgesG, y, v))
        .collect()
}

#[test]
fn pooling_fixtures() {
    let start = Instant::now();
    let p = pool_random_effects(&studies(&[0.5, 0.1], &[0.04, 0.04])).unwrap();
    assert!(rel(p.tau2, 0.04) < 1e-12, "tau2 {}", p.tau2);
    assert!(rel(p.mu, 0.3) < 1e-12, "mu {}", p.mu);
    assert!(rel(p.se, 0.2) < 1e-12, "se {}", p.se);
    assert!(rel(p.i2, 0.5) < 1e-12, "I2 {}", p.i2);

    let p = pool_random_effects(&studies(&[0.2, 0.4, 0.6], &[0.04, 0.04, 0.04])).unwrap();
    assert_eq!(p.tau2, 0.0);
    assert!(rel(p.mu, 0.4) < 1e-12, "mu {}", p.mu);
    assert!(rel(p.se, 0.115_470_053_837_925_152_9) < 1e-12, "se {}", p.se);
    assert!(start.elapsed() < Duration::from_secs(1));
}

#[test]
fn effect_size_fixtures() {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let g = standardized_mean_difference(&ContinuousArm::new(10.0, 2.0, 20), &ContinuousArm::new(8.0, 2.0, 20)).unwrap();
    assert!(close(g.y, 0.980_132_450_331_125_827_8), "g {}", g.y);
    assert!(close(g.v, 0.108_074_207_271_610_894_3), "v_g {}", g.v);

    let lnor = log_odds_ratio(&DichotomousArm::new(10, 20), &DichotomousArm::new(5, 20)).unwrap();
    assert!(close(lnor.y, 1.098_612_288_668_109_691_4), "lnOR {}", lnor.y);
    assert!(close(lnor.v, 0.466_666_666_666_666_666_7), "v_lnOR {}", lnor.v);
    assert!(lnor.correction_applied.is_none());

    let rd = risk_difference(&DichotomousArm::new(10, 20), &DichotomousArm::new(5, 20)).unwrap();
    assert!(close(rd.y, 0.25) && close(rd.v, 0.021_875), "rd {} {}", rd.y, rd.v);

    let smc = standardized_mean_change(8.0, 10.0, 2.0, 20, Some(0.5)).unwrap();
    assert!(close(smc.y, 0.96) && close(smc.v, 0.069_12), "smc {} {}", smc.y, smc.v);
    let imputed = standardized_mean_change(8.0, 10.0, 2.0, 20, None).unwrap();
    assert_eq!((imputed.y, imputed.v), (smc.y, smc.v));
    assert!(imputed.correction_applied.is_some());

    let md = mean_difference(&ContinuousArm::new(10.0, 2.0, 20), &ContinuousArm::new(8.0, 2.0, 20)).unwrap();
    assert!(close(md.y, 2.0) && close(md.v, 0.4));
}

fn random_studies(rng: &mut ChaCha8Rng) -> Vec<StudyEstimate> {
    let k = rng.gen_range(1..=12);
    let ys: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let vs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.005..2.0)).collect();
    studies(&ys, &vs)
}

fn arm(rng: &mut ChaCha8Rng) -> ContinuousArm {
    ContinuousArm::new(rng.gen_range(-50.0..50.0), rng.gen_range(0.1..20.0), rng.gen_range(2..500))
}

fn dich(rng: &mut ChaCha8Rng) -> DichotomousArm {
    let n = rng.gen_range(1..200);
    DichotomousArm::new(rng.gen_range(0..=n), n)
}

#[test]
fn randomized_property_suites() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for case in 0..CASES {
        let s = random_studies(&mut rng);
        let base = pool_random_effects(&s).unwrap();
        let scale = |p: f64| 1e-12 * p.abs().max(1.0);

        // location
        let a = rng.gen_range(-10.0..10.0);
        let shifted: Vec<StudyEstimate> = s.iter().map(|e| StudyEstimate { y: e.y + a, ..e.clone() }).collect();
        let p = pool_random_effects(&shifted).unwrap();
        let spread = s.iter().map(|e| e.y.abs()).fold(0.0, f64::max) + a.abs();
        assert!((p.mu - (base.mu + a)).abs() <= 1e-12 * (spread + 1.0), "case {case}: location mu");
        assert!((p.q - base.q).abs() <= scale(base.q) * (spread + 1.0), "case {case}: location Q");
        assert!((p.tau2 - base.tau2).abs() <= 1e-10 * (spread + 1.0) * base.tau2.max(1.0), "case {case}: location tau2");

        // scale
        let b = rng.gen_range(0.1..10.0);
        let scaled: Vec<StudyEstimate> =
            s.iter().map(|e| StudyEstimate { y: e.y * b, v: e.v * b * b, ..e.clone() }).collect();
        let p = pool_random_effects(&scaled).unwrap();
        assert!(rel(p.mu, base.mu * b) < 1e-9 || (p.mu - base.mu * b).abs() < 1e-12 * b, "case {case}: scale mu");
        assert!(rel(p.se, base.se * b) < 1e-12, "case {case}: scale se");
        assert!((p.q - base.q).abs() <= 1e-10 * base.q.max(1.0), "case {case}: scale Q");
        assert!((p.i2 - base.i2).abs() <= 1e-10, "case {case}: scale I2");

        // permutation
        let mut shuffled = s.clone();
        shuffled.shuffle(&mut rng);
        let p = pool_random_effects(&shuffled).unwrap();
        assert!((p.mu - base.mu).abs() <= 1e-12 * (spread + 1.0), "case {case}: permutation mu");
        assert!(rel(p.se, base.se) < 1e-12, "case {case}: permutation se");

        // bounds
        let lo = s.iter().map(|e| e.y).fold(f64::INFINITY, f64::min);
        let hi = s.iter().map(|e| e.y).fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= base.mu && base.mu <= hi, "case {case}: mu bounds");
        assert!(base.tau2 >= 0.0 && (0.0..=1.0).contains(&base.i2));

        // subset equivalence
        let mask: Vec<bool> = (0..s.len()).map(|_| rng.gen_bool(0.6)).collect();
        let subset: Vec<StudyEstimate> = s.iter().zip(&mask).filter(|(_, &m)| m).map(|(e, _)| e.clone()).collect();
        assert_eq!(pool_with_inclusion(&s, &mask), pool_random_effects(&subset), "case {case}: subset");

        // sign equivariance, all four families
        let (t, c) = (arm(&mut rng), arm(&mut rng));
        for f in [mean_difference, standardized_mean_difference] {
            let (fwd, back) = (f(&t, &c).unwrap(), f(&c, &t).unwrap());
            assert_eq!(fwd.y, -back.y, "case {case}: continuous sign");
            assert_eq!(fwd.v, back.v, "case {case}: continuous variance");
        }
        let (t2, c2) = (dich(&mut rng), dich(&mut rng));
        for f in [risk_difference, log_odds_ratio] {
            let (fwd, back) = (f(&t2, &c2).unwrap(), f(&c2, &t2).unwrap());
            assert_eq!(fwd.y, -back.y, "case {case}: dichotomous sign");
            assert_eq!(fwd.v, back.v, "case {case}: dichotomous variance");
        }

        // SMD scale invariance
        let k = rng.gen_range(0.01..100.0);
        let stretch = |a: &ContinuousArm| ContinuousArm::new(a.mean * k, a.sd * k, a.n);
        let g = standardized_mean_difference(&t, &c).unwrap();
        let gk = standardized_mean_difference(&stretch(&t), &stretch(&c)).unwrap();
        assert!((g.y - gk.y).abs() <= 1e-12 * (g.y.abs() + 1.0), "case {case}: SMD scale");
    }
    assert!(start.elapsed() < Duration::from_secs(30));
}

#[test]
fn quantile_oracle() {
    let q = sampling_quantiles(0.0, 1.0).unwrap();
    assert!((q[0] - -1.959_963_984_540_054).abs() < 1e-8);
    assert!((q[9] - -0.062_706_777_943_213_78).abs() < 1e-8);
    assert!((q[19] - 1.959_963_984_540_054).abs() < 1e-8);
    assert!((normal::inverse_cdf(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-8);

    // the standardized offsets pair up exactly, so the mean is μ up to the
    // rounding of μ + se·z itself
    for i in 0..10 {
        assert_eq!(q[i], -q[19 - i]);
    }
    let pair_mean = |q: &[f64]| (0..10).map(|i| (q[i] + q[19 - i]) / 2.0).sum::<f64>() / 10.0;
    assert_eq!(pair_mean(&q), 0.0);
    let fixture = sampling_quantiles(0.3, 0.2).unwrap();
    assert_eq!(fixture.iter().sum::<f64>() / 20.0, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..CASES {
        let (m, s) = (rng.gen_range(-5.0..5.0), rng.gen_range(0.01..3.0));
        let q = sampling_quantiles(m, s).unwrap();
        let ulp = f64::EPSILON * q.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!((pair_mean(&q) - m).abs() <= 2.0 * ulp, "mean {m} se {s}");
    }

    assert_eq!(count_beyond(&fixture, 0.0, Direction::Below), 1);
    assert_eq!(count_beyond(&fixture, 0.0, Direction::Above), 19);
    assert!((fixture[0] - -0.091_992_796_908_010_8).abs() < 1e-12);
    assert!((fixture[1] - 0.012_093_705_812_308_8).abs() < 1e-12);
}

fn fixture_answers(i: usize) -> AnswerSet {
    let value = common::answers(&format!("Study {i}"), (10.0 + i as f64, 2.0, 20, 8.0, 2.0, 20), "standardized");
    serde_json::from_value(value).unwrap()
}

fn triage_project(n: usize) -> (Project, Vec<String>) {
    let mut p = Project::create(ResearchQuestion::new("social robots", "depression")).unwrap();
    let mut ids = Vec::new();
    for i in 0..n {
        let doc = p.add_document(Citation::new(format!("A{i}"), 2020, format!("T{i}")), None).unwrap().id.clone();
        p.set_answers(&doc, fixture_answers(i)).unwrap();
        p.set_review_status(&doc, ReviewStatus::Complete).unwrap();
        ids.push(p.answers[&doc].results[0].id.clone());
    }
    (p, ids)
}

/// Independent placement oracle: the strongest action wins.
fn oracle(choices: [Choice; 3]) -> Option<&'static str> {
    let rank = |c: Choice| match c {
        Choice::Exclude => 3,
        Choice::ShowSeparately => 2,
        Choice::Separate => 1,
        Choice::Include | Choice::Flag => 0,
    };
    match choices.iter().map(|&c| rank(c)).max().unwrap() {
        3 => None,
        2 => Some("less applicable studies"),
        1 => Some("separate analysis"),
        _ => Some("main analysis"),
    }
}

fn partition_ok(p: &Project) -> bool {
    let eligible = p.eligible_results();
    let mut seen = BTreeSet::new();
    let all_unique = p.groups.iter().flat_map(|g| &g.members).all(|m| seen.insert(m.clone()));
    all_unique
        && eligible
            .iter()
            .all(|id| seen.contains(id) == (p.triage.placement(id) != Placement::Excluded))
        && seen.iter().all(|m| eligible.contains(m))
}

#[test]
fn triage_brute_force() {
    let mut combos = 0;
    for rob in Choice::options(TableKind::RiskOfBias) {
        for cc in Choice::options(TableKind::ConstructConsistency) {
            for app in Choice::options(TableKind::Applicability) {
                let (mut p, ids) = triage_project(1);
                for (kind, choice) in TableKind::ALL.into_iter().zip([rob, cc, app]) {
                    let mut a = TriageAction::new(&ids[0], kind, choice);
                    if choice == Choice::Flag {
                        a = a.with_note("confounding unclear");
                    }
                    p.apply_action(a).unwrap();
                }
                let placed = p.groups.iter().find(|g| g.members.contains(&ids[0])).map(|g| g.name.as_str());
                assert_eq!(placed, oracle([rob, cc, app]), "{rob:?} {cc:?} {app:?}");
                combos += 1;
            }
        }
    }
    assert_eq!(combos, 27);

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (template, ids) = triage_project(5);
    let doc_of: Vec<String> = ids.iter().map(|id| template.result(id).unwrap().document.id.clone()).collect();
    for seq in 0..10_000 {
        let mut p = template.clone();
        for _ in 0..rng.gen_range(1..=12) {
            let r = rng.gen_range(0..ids.len());
            let group = |p: &Project, rng: &mut ChaCha8Rng| p.groups[rng.gen_range(0..p.groups.len())].name.clone();
            let _ = match rng.gen_range(0..10) {
                0..=4 => {
                    let kind = TableKind::ALL[rng.gen_range(0..3)];
                    let choice = Choice::options(kind)[rng.gen_range(0..3)];
                    let mut a = TriageAction::new(&ids[r], kind, choice);
                    if choice == Choice::Flag {
                        a = a.with_note("note");
                    }
                    p.apply_action(a)
                }
                5 => p.edit_groups(GroupEdit::Create { name: format!("g{}", rng.gen_range(0..4)) }),
                6 => {
                    let from = group(&p, &mut rng);
                    p.edit_groups(GroupEdit::Rename { from, to: format!("g{}", rng.gen_range(0..4)) })
                }
                7 => {
                    let name = group(&p, &mut rng);
                    p.edit_groups(GroupEdit::Delete { name })
                }
                8 => {
                    let to = group(&p, &mut rng);
                    p.edit_groups(GroupEdit::Move { result_id: ids[r].clone(), to })
                }
                _ => p.toggle_inclusion(&doc_of[r]).map(|_| ()),
            };
        }
        assert!(partition_ok(&p), "sequence {seq}");
        let (state, groups) = p.replay_groups();
        assert_eq!(groups, p.groups, "sequence {seq}: replay");
        assert_eq!(state.choices, p.triage.choices);
    }
}

#[test]
fn headless_workflow() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let project = dir.path().join("robots.metaproj.json").to_str().unwrap().to_string();
    cli_ok(&["init", "--question-intervention", "social robots", "--question-outcome", "depression", "--out", &project]);
    cli_ok(&[
        "scope",
        "--project",
        &project,
        "--criterion",
        "social robot interventions",
        "--confounder",
        "baseline depression",
        "--target-context",
        "retirement community",
    ]);
    let arms = [(12.0, 3.0, 24, 10.0, 3.2, 25), (11.0, 2.5, 30, 10.2, 2.4, 31), (9.0, 4.0, 18, 8.1, 3.8, 20), (13.0, 3.0, 40, 10.0, 3.0, 38)];
    let results: Vec<String> = arms
        .iter()
        .enumerate()
        .map(|(i, a)| cli_add_study(dir.path(), &project, &format!("Study {}", i + 1), *a, "standardized").1)
        .collect();

    let note = "Note: study may have failed to control for baseline depression.";
    cli_ok(&["triage", "action", "--project", &project, "--result", &results[0], "--kind", "risk_of_bias", "--choice", "flag", "--note", note]);
    cli_ok(&["triage", "action", "--project", &project, "--result", &results[2], "--kind", "construct_consistency", "--choice", "separate"]);
    cli_ok(&["triage", "action", "--project", &project, "--result", &results[3], "--kind", "applicability", "--choice", "show_separately"]);
    for kind in ["risk_of_bias", "construct_consistency", "applicability"] {
        cli_ok(&["triage", "export", "--project", &project, "--kind", kind, "--out-dir", dir.path().to_str().unwrap()]);
    }

    let response: Value = serde_json::from_str(&cli_ok(&["analyze", "--project", &project, "--json"])).unwrap();
    let groups = response["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 3);
    let names: Vec<&str> = groups.iter().map(|g| g["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["main analysis", "separate analysis", "less applicable studies"]);
    for g in groups {
        let meta = g["meta_analyzed"].as_bool().unwrap();
        assert_eq!(g["pooled"].is_object(), meta, "{}", g["name"]);
        for row in g["rows"].as_array().unwrap() {
            assert_eq!(row["dotplot"]["dots"].as_array().unwrap().len(), 20);
        }
    }
    assert_eq!(groups[0]["rows"].as_array().unwrap().len(), 2);
    assert_eq!(groups[0]["rows"][0]["flag"], note);
    assert_eq!(groups[0]["pooled"]["k"], 2);

    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    cli_ok(&["analyze", "--project", &project, "--svg", a.to_str().unwrap()]);
    cli_ok(&["analyze", "--project", &project, "--svg", b.to_str().unwrap()]);
    let svg = std::fs::read(&a).unwrap();
    assert_eq!(svg, std::fs::read(&b).unwrap());
    let svg = String::from_utf8(svg).unwrap();
    assert_eq!(svg.matches(r#"class="forest-plot""#).count(), 3);
    assert_eq!(svg.matches(r#"class="pooled-row""#).count(), 2);
    assert!(svg.contains(&format!("<title>{note}</title>")));
    assert!(start.elapsed() < Duration::from_secs(5), "took {:?}", start.elapsed());
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: [&str; 8] = ["robot", "mood", "Zoë", "“quoted”", "a,b", "line\nbreak", "日本", "tab\t"];
    (0..rng.gen_range(1..4)).map(|_| PIECES[rng.gen_range(0..PIECES.len())]).collect::<Vec<_>>().join(" ")
}

fn random_project(rng: &mut ChaCha8Rng) -> Project {
    let mut p = Project::create(ResearchQuestion::new(random_text(rng), random_text(rng))).unwrap();
    p.update_scope(Scope {
        criteria: (0..rng.gen_range(0..3)).map(|_| random_text(rng)).collect(),
        confounders: (0..rng.gen_range(0..3)).map(|_| random_text(rng)).collect(),
        target_context: random_text(rng),
    })
    .unwrap();
    for i in 0..rng.gen_range(0..5) {
        let doc = p
            .add_document(Citation::new(random_text(rng), rng.gen_range(1950..2030), random_text(rng)), Some(format!("f{i}.pdf")))
            .unwrap()
            .id
            .clone();
        let mut answers = fixture_answers(i);
        answers.set("mean_age", rng.gen_range(18.0..99.0f64));
        for (j, row) in answers.results.iter_mut().enumerate() {
            row.label = random_text(rng);
            for x in row.stats.values_mut().flatten() {
                if x.fract() != 0.0 || *x > 30.0 {
                    *x = rng.gen_range(0.1..100.0);
                }
            }
            row.timepoint = (j % 2 == 0).then(|| "post".to_string());
        }
        if rng.gen_bool(0.5) {
            answers.results.push(EvidenceRow { id: String::new(), label: "follow-up".into(), timepoint: None, stats: Default::default() });
        }
        p.set_answers(&doc, answers).unwrap();
        p.set_quality(&doc, vec![QualityAnswer::new("rob_confounding", Verdict::Yes, random_text(rng))]).unwrap();
        if rng.gen_bool(0.5) {
            p.add_annotation(
                &doc,
                Annotation {
                    id: String::new(),
                    document_id: String::new(),
                    kind: AnnotationKind::Highlight,
                    page: rng.gen_range(1..30),
                    region: Some(Region { x: rng.gen_range(0.0..0.5), y: rng.gen_range(0.0..0.5), width: 0.25, height: 0.125 }),
                    text: Some(random_text(rng)),
                    link_target: None,
                },
            )
            .unwrap();
        }
        let _ = p.set_review_status(&doc, ReviewStatus::Complete);
        if rng.gen_bool(0.2) {
            p.toggle_inclusion(&doc).unwrap();
        }
    }
    let results = p.eligible_results();
    for id in &results {
        let kind = TableKind::ALL[rng.gen_range(0..3)];
        let choice = Choice::options(kind)[rng.gen_range(0..3)];
        let _ = p.apply_action(TriageAction::new(id, kind, choice).with_note(random_text(rng)));
    }
    if rng.gen_bool(0.5) {
        let _ = p.edit_groups(GroupEdit::Create { name: random_text(rng) });
    }
    p
}

#[test]
fn persistence_round_trip_and_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for i in 0..CASES {
        let p = random_project(&mut rng);
        let path = dir.path().join(format!("p{}.metaproj.json", i % 7));
        model::save_project(&p, &path).unwrap();
        let back = model::load_project(&path).unwrap();
        assert_eq!(back, p, "project {i}");
        assert_eq!(back.to_json(), p.to_json());
    }

    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async {
        let api = Api::new();
        let created = api.send(Method::POST, "/projects", None, Some(json!({"intervention": "robots", "outcome": "mood"}))).await;
        let id = created.json()["id"].as_str().unwrap().to_string();
        let uri = format!("/projects/{id}/scope");
        let scope = json!({"criteria": [], "confounders": [], "target_context": ""});
        let first = api.send(Method::PUT, &uri, Some(0), Some(scope.clone())).await;
        assert_eq!(first.status, StatusCode::OK);
        let stale = api.send(Method::PUT, &uri, Some(0), Some(scope)).await;
        assert_eq!(stale.status, StatusCode::CONFLICT);
    });
}
