//! SRM JSON files and Graphviz export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};
use crate::label::PropositionSet;
use crate::machine::{OutputDist, OutputFamily, Srm};

/// State identifiers may be written as strings or as integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Name(String),
    Index(u64),
}

impl StateRef {
    fn name(&self) -> String {
        match self {
            StateRef::Name(s) => s.clone(),
            StateRef::Index(i) => i.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub from: StateRef,
    pub label: Vec<String>,
    pub to: StateRef,
    pub mean: f64,
    #[serde(default)]
    pub half_width: f64,
    #[serde(default, skip_serializing_if = "is_uniform")]
    pub family: OutputFamily,
}

fn is_uniform(f: &OutputFamily) -> bool {
    *f == OutputFamily::Uniform
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SrmRecord {
    pub propositions: PropositionSet,
    pub states: Vec<StateRef>,
    pub initial: StateRef,
    #[serde(default)]
    pub terminal: Vec<StateRef>,
    #[serde(default)]
    pub transitions: Vec<TransitionRecord>,
}

impl SrmRecord {
    pub fn from_machine(m: &Srm) -> Self {
        let props = m.propositions();
        let name = |v: usize| StateRef::Name(m.state_names()[v].clone());
        Self {
            propositions: props.clone(),
            states: (0..m.num_states()).map(name).collect(),
            initial: name(m.initial()),
            terminal: m.terminal().iter().map(|&v| name(v)).collect(),
            transitions: m
                .transitions()
                .map(|(v, l, t)| TransitionRecord {
                    from: name(v),
                    label: props.names_of(l),
                    to: name(t.to),
                    mean: t.output.mean,
                    half_width: t.output.half_width,
                    family: t.output.family,
                })
                .collect(),
        }
    }

    pub fn to_machine(&self) -> Result<Srm> {
        let names: Vec<String> = self.states.iter().map(StateRef::name).collect();
        let lookup = |r: &StateRef| {
            let n = r.name();
            names.iter().position(|x| *x == n).ok_or(SrmError::UnknownState(n))
        };
        let mut m = Srm::with_names(self.propositions.clone(), names.clone(), lookup(&self.initial)?)?;
        for t in &self.terminal {
            m.set_terminal(lookup(t)?)?;
        }
        for t in &self.transitions {
            let label = self.propositions.label(&t.label)?;
            if t.half_width < 0.0 {
                return Err(SrmError::InvalidMachine(format!(
                    "negative half_width on transition from {}",
                    t.from.name()
                )));
            }
            let out = OutputDist {
                mean: t.mean,
                half_width: t.half_width,
                family: t.family,
            };
            m.set_transition(lookup(&t.from)?, label, lookup(&t.to)?, out)?;
        }
        Ok(m)
    }
}

pub fn machine_from_json(text: &str) -> Result<Srm> {
    serde_json::from_str::<SrmRecord>(text)?.to_machine()
}

pub fn machine_to_json(m: &Srm) -> String {
    serde_json::to_string_pretty(&SrmRecord::from_machine(m)).expect("machine records serialize")
}

pub fn load_machine(path: &Path) -> Result<Srm> {
    machine_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_machine(m: &Srm, path: &Path) -> Result<()> {
    std::fs::write(path, machine_to_json(m) + "\n")?;
    Ok(())
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering: one edge per explicit transition, labeled
/// `formula / U[lo, hi]`.
pub fn to_dot(m: &Srm) -> String {
    let props = m.propositions();
    let mut out = String::from("digraph srm {\n    rankdir=LR;\n    __start [shape=point];\n");
    for (v, name) in m.state_names().iter().enumerate() {
        let shape = if m.is_terminal(v) { "doublecircle" } else { "circle" };
        let _ = writeln!(out, "    s{v} [label=\"{}\", shape={shape}];", escape(name));
    }
    let _ = writeln!(out, "    __start -> s{};", m.initial());
    for (v, l, t) in m.transitions() {
        let _ = writeln!(
            out,
            "    s{v} -> s{} [label=\"{} / U[{}, {}]\"];",
            t.to,
            escape(&props.display(l)),
            fmt_num(t.output.lower()),
            fmt_num(t.output.upper()),
        );
    }
    out.push_str("}\n");
    out
}
