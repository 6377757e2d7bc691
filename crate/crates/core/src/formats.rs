//! JSON document format for tabular MDPs.
//!
//! ```json
//! {"n_states": 2, "n_actions": 1, "horizon": 2, "rho0": [1, 0], "terminals": [],
//!  "transitions": [{"s": 0, "a": 0, "s2": 1, "p": 1.0, "r": 1.0}, …]}
//! ```
//!
//! Validation errors name the line of the offending transition.

use serde::{Deserialize, Serialize};

use crate::error::{MdpError, Result};
use crate::mdp::{Successor, TabularMdp, PROB_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionEntry {
    pub s: usize,
    pub a: usize,
    pub s2: usize,
    pub p: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub rho0: Vec<f64>,
    #[serde(default)]
    pub terminals: Vec<usize>,
    pub transitions: Vec<TransitionEntry>,
}

impl From<&TabularMdp> for MdpDocument {
    fn from(m: &TabularMdp) -> Self {
        let mut transitions = Vec::new();
        for s in 0..m.n_states() {
            for a in 0..m.n_actions() {
                for x in m.successors(s, a) {
                    transitions.push(TransitionEntry {
                        s,
                        a,
                        s2: x.state,
                        p: x.prob,
                        r: x.reward,
                    });
                }
            }
        }
        Self {
            n_states: m.n_states(),
            n_actions: m.n_actions(),
            horizon: m.horizon(),
            rho0: m.rho0().to_vec(),
            terminals: m.terminals(),
            transitions,
        }
    }
}

/// Serialises with one transition per line.
pub fn mdp_to_json(m: &TabularMdp) -> String {
    let doc = MdpDocument::from(m);
    let mut out = String::from("{\n");
    out += &format!("  \"n_states\": {},\n", doc.n_states);
    out += &format!("  \"n_actions\": {},\n", doc.n_actions);
    out += &format!("  \"horizon\": {},\n", doc.horizon);
    out += &format!("  \"rho0\": {},\n", json(&doc.rho0));
    out += &format!("  \"terminals\": {},\n", json(&doc.terminals));
    out += "  \"transitions\": [\n";
    let rows: Vec<String> = doc.transitions.iter().map(|t| format!("    {}", json(t))).collect();
    out += &rows.join(",\n");
    out += "\n  ]\n}\n";
    out
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serialises")
}

/// Parses and validates an MDP document.
pub fn mdp_from_json(text: &str) -> Result<TabularMdp> {
    let doc: MdpDocument = serde_json::from_str(text)
        .map_err(|e| MdpError::Format(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    let lines = transition_lines(text);
    let line_of = |i: usize| lines.get(i).copied().unwrap_or(0);
    let (n, na) = (doc.n_states, doc.n_actions);
    if n == 0 || na == 0 {
        return Err(MdpError::Format("n_states and n_actions must be positive".into()));
    }
    let mut rows: Vec<Vec<Successor>> = vec![Vec::new(); n * na];
    let mut first_line = vec![0usize; n * na];
    for (i, t) in doc.transitions.iter().enumerate() {
        let at = line_of(i);
        if t.s >= n || t.s2 >= n || t.a >= na {
            return Err(MdpError::Format(format!(
                "line {at}: transition ({}, {}, {}) out of range",
                t.s, t.a, t.s2
            )));
        }
        if !(0.0..=1.0).contains(&t.p) {
            return Err(MdpError::Format(format!("line {at}: probability {} outside [0, 1]", t.p)));
        }
        if !(0.0..=1.0).contains(&t.r) {
            return Err(MdpError::Format(format!("line {at}: reward {} outside [0, 1]", t.r)));
        }
        let idx = t.s * na + t.a;
        if rows[idx].is_empty() {
            first_line[idx] = at;
        }
        rows[idx].push(Successor::new(t.s2, t.p, t.r));
    }
    for (idx, row) in rows.iter().enumerate() {
        let (s, a) = (idx / na, idx % na);
        if row.is_empty() {
            return Err(MdpError::Format(format!("no transitions listed for state {s}, action {a}")));
        }
        let total: f64 = row.iter().map(|x| x.prob).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(MdpError::Format(format!(
                "line {}: row for state {s}, action {a} sums to {total}",
                first_line[idx]
            )));
        }
    }
    TabularMdp::new(n, na, doc.horizon, doc.rho0, rows, &doc.terminals)
}

/// 1-based line of each element of the top-level `transitions` array.
fn transition_lines(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut last_key = String::new();
    let mut current = String::new();
    let mut array_depth: Option<usize> = None;
    for ch in text.chars() {
        if ch == '\n' {
            line += 1;
        }
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
                last_key = std::mem::take(&mut current);
            } else {
                current.push(ch);
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => {
                if array_depth == Some(depth) {
                    out.push(line);
                }
                depth += 1;
            }
            '[' => {
                if depth == 1 && last_key == "transitions" && array_depth.is_none() {
                    array_depth = Some(depth + 1);
                }
                depth += 1;
            }
            '}' | ']' => {
                depth = depth.saturating_sub(1);
                if ch == ']' && array_depth == Some(depth + 1) {
                    array_depth = None;
                    last_key.clear();
                }
            }
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::tests::chain_a;

    #[test]
    fn round_trip() {
        for m in [chain_a(3), crate::envs::random_mdp(5, 3, 4, 3, 1)] {
            let text = mdp_to_json(&m);
            assert_eq!(mdp_from_json(&text).unwrap(), m);
        }
    }

    #[test]
    fn diagnostics_name_lines() {
        let text = mdp_to_json(&chain_a(2)).replace("\"p\":1.0,\"r\":0.0", "\"p\":0.5,\"r\":0.0");
        let err = mdp_from_json(&text).unwrap_err().to_string();
        assert!(err.contains("line 9"), "{err}");

        let text = mdp_to_json(&chain_a(2)).replace("\"r\":1.0", "\"r\":1.5");
        let err = mdp_from_json(&text).unwrap_err().to_string();
        assert!(err.contains("line 8") && err.contains("reward"), "{err}");

        let err = mdp_from_json("{\n  \"n_states\": 2,\n  \"horizon\": \"x\"\n}").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn scanner_ignores_braces_in_strings() {
        let text = "{\"note\": \"{[\", \"transitions\": [\n{\"s\":0},\n  {\"s\":1}]}";
        assert_eq!(transition_lines(text), vec![2, 3]);
    }

    #[test]
    fn missing_rows_are_reported() {
        let text = r#"{"n_states": 1, "n_actions": 2, "horizon": 2, "rho0": [1.0],
            "transitions": [{"s": 0, "a": 0, "s2": 0, "p": 1.0, "r": 0.0}]}"#;
        let err = mdp_from_json(text).unwrap_err().to_string();
        assert!(err.contains("action 1"), "{err}");
    }
}
