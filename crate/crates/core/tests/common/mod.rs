//! Fixtures shared by the integration suites: debate configs, orchestrators
//! over mock scenarios, and scripted stance geometries.
#![allow(dead_code)]

use std::sync::Arc;

use chrono::DateTime;
use debatelab::model::{
    Agent, Contentiousness, DebateConfig, ModelRole, ModeratorStyle, SpeakerOrder, StanceSource, Topic,
    TurnKind, DEFAULT_TEMPERATURE,
};
use debatelab::orchestrator::{Clock, Orchestrator};
use debatelab::personas::PersonaCatalog;
use debatelab::provider::{Gateway, MockBackend, MockScenario, ScriptedTurn};
use debatelab::templates::PromptTemplateSet;

pub fn topic(id: &str, contentiousness: Contentiousness) -> Topic {
    Topic {
        id: id.into(),
        text: format!("Motion {id}: cities should price road congestion"),
        source: "fixture".into(),
        contentiousness,
    }
}

pub fn config(topic: Topic, rounds: u32) -> DebateConfig {
    let catalog = PersonaCatalog::bundled();
    let templates = PromptTemplateSet::bundled();
    let moderator = templates.moderator_spec(ModeratorStyle::Neutral, &topic.text).unwrap();
    DebateConfig {
        topic,
        debater_a: catalog.get("evidence-driven analyst").unwrap().clone(),
        debater_b: catalog.get("values-focused ethicist").unwrap().clone(),
        moderator,
        rounds,
        temperature: DEFAULT_TEMPERATURE,
        max_tokens: 256,
        model_ids: ModelRole::ALL.iter().map(|r| (*r, format!("mock-{}", r.as_str()))).collect(),
        seed: 11,
        stance_source: StanceSource::Elicited,
        speaker_order: SpeakerOrder::AFirst,
    }
}

pub fn orchestrator(scenario: MockScenario) -> Orchestrator {
    let backend = MockBackend::new(scenario).expect("valid scenario");
    Orchestrator::new(Gateway::new(Arc::new(backend)), Arc::new(PromptTemplateSet::bundled()))
        .with_clock(Clock::Fixed(DateTime::UNIX_EPOCH))
}

pub fn generated_scenario(seed: u64) -> MockScenario {
    MockScenario { seed, generate_unscripted: true, ..Default::default() }
}

fn scripted(agent: Agent, round: u32, kind: TurnKind, text: String, v: &[f64]) -> ScriptedTurn {
    ScriptedTurn {
        topic: None,
        agent,
        round,
        kind,
        text,
        embedding: Some(v.to_vec()),
        sentiment: None,
        bias: None,
        self_report: None,
    }
}

/// One row of a three-round case-study table.
#[derive(Debug, Clone, Copy)]
pub struct CaseStudy {
    pub name: &'static str,
    pub agreement: [f64; 3],
    pub shift: [f64; 3],
    pub bias: [[u8; 2]; 3],
    /// Reported across-agent total shift, when the case states one.
    pub total_shift: Option<f64>,
    /// Agreement of the opening stances. Free in the construction; chosen so
    /// the opening-to-closing distance lands on the reported total.
    pub opening_agreement: f64,
}

pub const CASE_STUDIES: [CaseStudy; 3] = [
    CaseStudy {
        name: "ideal consensus",
        agreement: [0.715, 0.952, 1.000],
        shift: [0.248, 0.159, 0.062],
        bias: [[1, 0], [0, 0], [0, 0]],
        total_shift: Some(0.355),
        opening_agreement: -0.016404902,
    },
    CaseStudy {
        name: "de-biasing",
        agreement: [0.859, 0.992, 0.993],
        shift: [0.557, 0.101, 0.038],
        bias: [[1, 0], [0, 0], [0, 0]],
        total_shift: Some(0.596),
        opening_agreement: -0.449497329,
    },
    CaseStudy {
        name: "bias amplification",
        agreement: [0.793, 0.726, 0.770],
        shift: [0.129, 0.113, 0.130],
        bias: [[1, 0], [1, 0], [1, 1]],
        total_shift: None,
        opening_agreement: 0.5,
    },
];

pub const CASE_DIM: usize = 6;

/// Stance vectors `[A, B]` for rounds 0..=3.
///
/// Both agents sit at half-angle `θ_r` either side of a midpoint direction
/// `M_r`, offset along `U_r ⟂ M_r`: `A = cos θ M + sin θ U`, `B = cos θ M − sin θ U`,
/// so `cos(A_r, B_r) = cos 2θ_r`. `M` turns in the (e0, e2) plane and `U` in the
/// (e1, e3) plane by the same signed step `δ_r`, which keeps every cross term
/// zero and gives both agents the per-round shift
/// `1 − cos(θ_{r−1} − θ_r) cos δ_r`. Step signs alternate +, −, + so the
/// path folds back toward the opening.
pub fn case_study_stances(case: &CaseStudy) -> Vec<[Vec<f64>; 2]> {
    let mut theta = vec![case.opening_agreement.acos() / 2.0];
    theta.extend(case.agreement.iter().map(|g| g.acos() / 2.0));
    let signs = [1.0, -1.0, 1.0];
    let mut angle = 0.0;
    let mut out = Vec::new();
    for r in 0..=3 {
        if r > 0 {
            let ratio = (1.0 - case.shift[r - 1]) / (theta[r - 1] - theta[r]).cos();
            assert!(ratio <= 1.0, "{}: round {r} shift too small for its agreement change", case.name);
            angle += signs[r - 1] * ratio.acos();
        }
        let (c, s) = (theta[r].cos(), theta[r].sin());
        let m = [angle.cos(), 0.0, angle.sin(), 0.0];
        let u = [0.0, angle.cos(), 0.0, angle.sin()];
        let mut a = vec![0.0; CASE_DIM];
        let mut b = vec![0.0; CASE_DIM];
        for i in 0..4 {
            a[i] = c * m[i] + s * u[i];
            b[i] = c * m[i] - s * u[i];
        }
        out.push([a, b]);
    }
    out
}

/// Scenario whose stance turns carry the case-study geometry and whose
/// argument turns carry the table's bias labels. Closing stances repeat the
/// round-3 vectors.
pub fn case_study_scenario(case: &CaseStudy) -> MockScenario {
    let stances = case_study_stances(case);
    let mut turns = Vec::new();
    for (i, agent) in Agent::DEBATERS.into_iter().enumerate() {
        turns.push(scripted(agent, 0, TurnKind::OpeningStance, format!("{agent} opens"), &stances[0][i]));
        for r in 1..=3u32 {
            let v = &stances[r as usize][i];
            turns.push(scripted(agent, r, TurnKind::RoundStance, format!("{agent} stance after round {r}"), v));
            let mut arg = scripted(
                agent,
                r,
                TurnKind::Argument,
                format!("{agent} argues in round {r}"),
                &argument_vector(r, i),
            );
            arg.bias = Some(case.bias[r as usize - 1][i]);
            turns.push(arg);
        }
        turns.push(scripted(agent, 3, TurnKind::ClosingStance, format!("{agent} closes"), &stances[3][i]));
    }
    MockScenario { seed: 3, generate_unscripted: true, turns, ..Default::default() }
}

fn argument_vector(round: u32, agent: usize) -> Vec<f64> {
    let mut v = vec![0.0; CASE_DIM];
    v[4] = 1.0;
    v[5] = 0.25 * round as f64 + agent as f64;
    v
}

pub const FUNNEL_DIM: usize = 8;

/// Half-angle between the two debaters after `round` of `rounds`: starts at
/// 60° and shrinks geometrically to under 0.5°.
pub fn funnel_half_angle(round: u32, rounds: u32) -> f64 {
    let start = 60f64.to_radians();
    let end = 0.4f64.to_radians();
    start * (end / start).powf(round as f64 / rounds as f64)
}

fn funnel_pair(theta: f64, axis: usize) -> [Vec<f64>; 2] {
    let mut a = vec![0.0; FUNNEL_DIM];
    let mut b = vec![0.0; FUNNEL_DIM];
    a[0] = theta.cos();
    b[0] = theta.cos();
    a[axis] = theta.sin();
    b[axis] = -theta.sin();
    [a, b]
}

/// Stances and arguments both close in on a shared direction every round.
pub fn funneling_scenario(rounds: u32) -> MockScenario {
    let mut turns = Vec::new();
    let opening = funnel_pair(funnel_half_angle(0, rounds), 1);
    for (i, agent) in Agent::DEBATERS.into_iter().enumerate() {
        turns.push(scripted(agent, 0, TurnKind::OpeningStance, format!("{agent} opening"), &opening[i]));
        for r in 1..=rounds {
            let theta = funnel_half_angle(r, rounds);
            let stance = funnel_pair(theta, 1);
            // arguments trail the stance slightly, on their own axis
            let argument = funnel_pair(theta * 1.2, 2);
            turns.push(scripted(agent, r, TurnKind::RoundStance, format!("{agent} stance {r}"), &stance[i]));
            turns.push(scripted(agent, r, TurnKind::Argument, format!("{agent} argument {r}"), &argument[i]));
        }
        let closing = funnel_pair(funnel_half_angle(rounds, rounds), 1);
        turns.push(scripted(agent, rounds, TurnKind::ClosingStance, format!("{agent} closing"), &closing[i]));
    }
    MockScenario { seed: 5, generate_unscripted: true, turns, ..Default::default() }
}

/// Ten topics, alternating contentiousness labels.
pub fn ten_topics() -> Vec<Topic> {
    (0..10)
        .map(|i| {
            let label = if i % 2 == 0 { Contentiousness::Contentious } else { Contentiousness::LessContentious };
            topic(&format!("topic-{i:02}"), label)
        })
        .collect()
}

pub fn topics_jsonl(topics: &[Topic]) -> String {
    topics.iter().map(|t| serde_json::to_string(t).unwrap() + "\n").collect()
}
