//! Prompt a scripted model, parse its reply and report validity.
//! Point `LEED_LLM_BASE_URL` and `LEED_LLM_MODEL` at a chat-completion
//! server and pass `--live` to use a real endpoint instead.

use leed::demo::{
    build_prompt, validate_route, ChatEndpoint, EndpointConfig, ExpertProvider, PromptState, ProviderKind,
    ScriptedModel, TextModel,
};
use leed::env::AgentSpec;
use leed::graph::grid;
use rand::SeedableRng;

fn main() -> anyhow::Result<()> {
    let graph = grid(5, 1.0);
    let specs = vec![
        AgentSpec { agent_id: 0, start: 0, dest: 24, depart_time: 0 },
        AgentSpec { agent_id: 1, start: 4, dest: 20, depart_time: 0 },
    ];
    let model: Box<dyn TextModel> = if std::env::args().any(|a| a == "--live") {
        Box::new(ChatEndpoint::new(EndpointConfig::from_env()?))
    } else {
        Box::new(ScriptedModel::new(vec![
            "Sure! {\"Agent_0\": [0, 1, 2, 3, 4, 9, 14, 19, 24], \"Agent_1\": [4, 20]}".to_string(),
        ])?)
    };
    let mut provider = ExpertProvider::text_model(model, Some(ProviderKind::Oracle), 1.0);
    let prompt = PromptState::new(&graph, &specs);
    println!("--- prompt ---\n{}\n--------------", build_prompt(&prompt));

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let out = provider.generate(&prompt, &graph, &specs, &mut rng)?;
    println!("tokens {} fallback {}", out.tokens, out.used_fallback);
    for e in &out.parse_errors {
        println!("parse problem: {e}");
    }
    for (spec, seq) in specs.iter().zip(&out.set.sequences) {
        let w = seq.waypoints();
        println!("agent {} {:?} valid {}", spec.agent_id, w, validate_route(&graph, spec, &w));
    }
    Ok(())
}
