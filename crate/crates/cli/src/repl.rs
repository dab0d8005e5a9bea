//! Console session where a person answers the agent's questions.
//!
//! Malformed answers are explained and asked again. Typing `quit` (or closing
//! the input) ends the session; the dialogue so far is still returned and is
//! closed with an exit turn whose answer reads `quit`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use casande_core::environment::{build_layout, reset_with, step, valid_actions, EnvConfig};
use casande_core::knowledge::{EvidenceValue, KnowledgeBase, Sex};
use casande_core::metrics::ranking;
use casande_core::rollout::{format_answer, question_text, Policy, Trajectory, TurnRecord};

use crate::answer::{hint, parse_answer};
use crate::error::{data, runtime, CliResult};

pub const QUIT: &str = "quit";
const MAX_AGE: u32 = 120;

pub struct SessionSetup<'a> {
    pub kb: &'a KnowledgeBase,
    pub env: &'a EnvConfig,
    /// Differential display threshold.
    pub threshold: f64,
}

#[derive(Debug)]
pub struct SessionOutcome {
    pub trajectory: Trajectory,
    /// Every accepted line, `quit` included, in order.
    pub script: Vec<String>,
    pub quit: bool,
}

struct Io<'a> {
    input: &'a mut dyn BufRead,
    output: &'a mut dyn Write,
    script: Vec<String>,
}

impl Io<'_> {
    fn say(&mut self, text: impl AsRef<str>) -> CliResult<()> {
        writeln!(self.output, "{}", text.as_ref()).map_err(data)
    }

    /// Prompts until `parse` accepts; `None` on quit or end of input.
    fn ask<T>(&mut self, prompt: &str, parse: impl Fn(&str) -> Result<T, String>) -> CliResult<Option<T>> {
        loop {
            write!(self.output, "{prompt} ").map_err(data)?;
            self.output.flush().map_err(data)?;
            let mut line = String::new();
            if self.input.read_line(&mut line).map_err(data)? == 0 {
                self.say("")?;
                return Ok(None);
            }
            let line = line.trim();
            if line.eq_ignore_ascii_case(QUIT) {
                self.script.push(QUIT.to_string());
                return Ok(None);
            }
            match parse(line) {
                Ok(v) => {
                    self.script.push(line.to_string());
                    return Ok(Some(v));
                }
                Err(msg) => self.say(format!("  {msg}; type '{QUIT}' to stop"))?,
            }
        }
    }
}

fn parse_age(s: &str) -> Result<u32, String> {
    s.parse::<u32>()
        .ok()
        .filter(|a| *a <= MAX_AGE)
        .ok_or_else(|| format!("please enter an age from 0 to {MAX_AGE}"))
}

fn parse_sex(s: &str) -> Result<Sex, String> {
    match s.to_ascii_lowercase().as_str() {
        "m" | "male" => Ok(Sex::M),
        "f" | "female" => Ok(Sex::F),
        _ => Err("please answer m or f".to_string()),
    }
}

fn parse_evidence(kb: &KnowledgeBase, s: &str) -> Result<usize, String> {
    if let Ok(id) = s.parse::<usize>() {
        if id < kb.num_evidences() {
            return Ok(id);
        }
    }
    kb.evidences()
        .iter()
        .position(|e| e.name.eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("no evidence {s:?}; give an id from the list or a name"))
}

/// Pathologies above `threshold`, most probable first.
pub fn describe_differential(kb: &KnowledgeBase, belief: &[f64], threshold: f64) -> String {
    let shown: Vec<String> = ranking(belief)
        .into_iter()
        .filter(|&d| belief[d] > threshold)
        .map(|d| format!("{} {:.1}%", kb.pathologies()[d].name, 100.0 * belief[d]))
        .collect();
    if shown.is_empty() {
        "(no pathology above threshold)".to_string()
    } else {
        shown.join(", ")
    }
}

fn done(io: Io<'_>, turns: Vec<TurnRecord>, quit: bool) -> SessionOutcome {
    SessionOutcome {
        trajectory: Trajectory { turns },
        script: io.script,
        quit,
    }
}

fn ask_value(io: &mut Io<'_>, kb: &KnowledgeBase, evidence: usize) -> CliResult<Option<EvidenceValue>> {
    let spec = kb.evidence(evidence);
    let prompt = format!("{} {}\n>", spec.question, hint(&spec.kind));
    io.ask(&prompt, |s| parse_answer(&spec.kind, s).map_err(|e| e.to_string()))
}

pub fn run_session(
    setup: &SessionSetup<'_>,
    policy: &mut dyn Policy,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> CliResult<SessionOutcome> {
    let kb = setup.kb;
    let layout = build_layout(kb);
    let exit = kb.num_evidences();
    let mut io = Io {
        input,
        output,
        script: Vec::new(),
    };
    io.say(format!("You are the patient. Type '{QUIT}' at any prompt to stop."))?;
    let Some(age) = io.ask("Age:", parse_age)? else {
        return Ok(done(io, Vec::new(), true));
    };
    let Some(sex) = io.ask("Sex [m/f]:", parse_sex)? else {
        return Ok(done(io, Vec::new(), true));
    };
    io.say("What brings you in today?")?;
    for e in kb.evidences() {
        io.say(format!("  {:>3}  {}", e.id, e.name))?;
    }
    let Some(chief) = io.ask("Chief complaint (id or name):", |s| parse_evidence(kb, s))? else {
        return Ok(done(io, Vec::new(), true));
    };
    let chief_answer = loop {
        let Some(v) = ask_value(&mut io, kb, chief)? else {
            return Ok(done(io, Vec::new(), true));
        };
        if v.is_experienced() {
            break v;
        }
        io.say("  the chief complaint has to be something you experience")?;
    };

    let mut answers: HashMap<usize, EvidenceValue> = HashMap::from([(chief, chief_answer.clone())]);
    let mut state = reset_with(age, sex, chief, &chief_answer, &layout, kb);
    let mut turns: Vec<TurnRecord> = Vec::new();
    loop {
        let valid = valid_actions(&state, exit);
        let decision = policy.decide(&state, &valid, &answers).map_err(runtime)?;
        let belief = decision.belief.into_inner();
        io.say(format!("Differential: {}", describe_differential(kb, &belief, setup.threshold)))?;
        let record = |action: usize, answer: String, base_reward: f64, belief: Vec<f64>| TurnRecord {
            turn: state.turn,
            action_id: action,
            question: question_text(kb, action),
            answer,
            base_reward,
            shaped_components: None,
            belief,
        };
        if decision.action == exit {
            turns.push(record(exit, String::new(), 0.0, belief));
            io.say("The interview is over.")?;
            return Ok(done(io, turns, false));
        }
        let Some(value) = ask_value(&mut io, kb, decision.action)? else {
            turns.push(record(exit, QUIT.to_string(), 0.0, belief));
            io.say("Session stopped.")?;
            return Ok(done(io, turns, true));
        };
        answers.insert(decision.action, value.clone());
        let tr = step(&state, decision.action, &answers, setup.env, &layout, kb).map_err(runtime)?;
        turns.push(record(decision.action, format_answer(kb, decision.action, &value), tr.base_reward, belief));
        if tr.terminal {
            io.say("The interview reached its turn limit.")?;
            return Ok(done(io, turns, false));
        }
        state = tr.next_state;
    }
}
