use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MappingResult;
use crate::model::FunctionSolutionPair;
use crate::provider::tasks;
use crate::provider::templates::ALTERNATIVES;
use crate::provider::{params, Capability, Gateway, ProviderRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartEntry {
    pub function: String,
    pub current: String,
    pub alternatives: [String; 2],
}

impl ChartEntry {
    /// The current solution and both alternatives are pairwise distinct.
    pub fn is_well_formed(&self) -> bool {
        let [a, b] = &self.alternatives;
        let k = |s: &str| s.trim().to_lowercase();
        let (c, a, b) = (k(&self.current), k(a), k(b));
        !c.is_empty() && !a.is_empty() && !b.is_empty() && c != a && c != b && a != b
    }
}

/// Per-component function entries plus the functions no region took.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FunctionChart {
    pub components: BTreeMap<String, Vec<ChartEntry>>,
    pub unmapped: Vec<FunctionSolutionPair>,
}

impl FunctionChart {
    pub fn entries(&self) -> impl Iterator<Item = (&str, &ChartEntry)> {
        self.components
            .iter()
            .flat_map(|(c, es)| es.iter().map(move |e| (c.as_str(), e)))
    }

    pub fn entry_count(&self) -> usize {
        self.components.values().map(Vec::len).sum()
    }

    pub fn find(&self, function: &str) -> Option<(&str, &ChartEntry)> {
        self.entries().find(|(_, e)| e.function == function)
    }

    pub fn find_mut(&mut self, function: &str) -> Option<&mut ChartEntry> {
        self.components
            .values_mut()
            .flat_map(|es| es.iter_mut())
            .find(|e| e.function == function)
    }

    /// Every entry well formed and every function charted once.
    pub fn check_shape(&self) -> bool {
        let mut seen = std::collections::BTreeSet::new();
        self.entries()
            .all(|(_, e)| e.is_well_formed() && seen.insert(e.function.as_str()))
    }
}

fn norm(s: &str) -> String {
    s.trim().to_lowercase()
}

fn strip_marker(line: &str) -> &str {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix(['-', '*', '•']) {
        return rest.trim();
    }
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        if let Some(rest) = line[digits..].strip_prefix(['.', ')']) {
            if rest.starts_with(' ') {
                return rest.trim();
            }
        }
    }
    line
}

/// Solution lines of an alternatives answer, bullets and numbering removed.
pub fn parse_alternatives(text: &str) -> Vec<String> {
    text.lines()
        .map(strip_marker)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect()
}

fn push_distinct(out: &mut Vec<String>, current: &str, candidates: Vec<String>) {
    for c in candidates {
        if out.len() == 2 {
            break;
        }
        if norm(&c) != norm(current) && !out.iter().any(|o| norm(o) == norm(&c)) {
            out.push(c);
        }
    }
}

fn ask(gw: &Gateway, pair: &FunctionSolutionPair, category: &str, attempt: u64) -> Vec<String> {
    let Ok(prompt) = gw.templates().render(
        ALTERNATIVES,
        &[("FUNCTION", &pair.function), ("SOLUTION", &pair.solution)],
    ) else {
        return Vec::new();
    };
    let req = ProviderRequest::new(Capability::Vision, prompt)
        .param(params::TASK, tasks::ALTERNATIVES)
        .param(params::FUNCTION, pair.function.as_str())
        .param(params::CURRENT, pair.solution.as_str())
        .param(params::CATEGORY, category)
        .param(params::ATTEMPT, attempt);
    match gw.invoke(&req) {
        Ok(resp) => resp.text.as_deref().map(parse_alternatives).unwrap_or_default(),
        Err(e) => {
            tracing::warn!(function = %pair.function, error = %e, "alternatives query failed");
            Vec::new()
        }
    }
}

/// Two alternatives distinct from `pair.solution` and from each other.
///
/// Queries once, re-queries once if the answer was short of two distinct
/// solutions, then fills the gap with `variant A/B of <current>`.
pub fn alternatives_for(gw: &Gateway, pair: &FunctionSolutionPair, category: &str) -> [String; 2] {
    let mut out = Vec::with_capacity(2);
    push_distinct(&mut out, &pair.solution, ask(gw, pair, category, 1));
    if out.len() < 2 {
        push_distinct(&mut out, &pair.solution, ask(gw, pair, category, 2));
    }
    let fill = ["A", "B", "C"].map(|t| format!("variant {t} of {}", pair.solution));
    push_distinct(&mut out, &pair.solution, fill.to_vec());
    [out[0].clone(), out[1].clone()]
}

/// Chart every mapped function under its component; alternatives are
/// fetched concurrently and ordered by function.
pub fn build_chart(
    gw: &Gateway,
    mapping: &MappingResult,
    pairs: &[FunctionSolutionPair],
    category: &str,
) -> FunctionChart {
    let mapped: Vec<(&FunctionSolutionPair, &String)> = pairs
        .iter()
        .filter_map(|p| mapping.assignments.get(&p.function).map(|c| (p, c)))
        .collect();
    let alternatives: Vec<[String; 2]> = std::thread::scope(|s| {
        let handles: Vec<_> = mapped
            .iter()
            .map(|(p, _)| s.spawn(|| alternatives_for(gw, p, category)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("alternatives worker panicked"))
            .collect()
    });
    let mut chart = FunctionChart::default();
    for ((pair, component), alts) in mapped.into_iter().zip(alternatives) {
        chart
            .components
            .entry(component.clone())
            .or_default()
            .push(ChartEntry {
                function: pair.function.clone(),
                current: pair.solution.clone(),
                alternatives: alts,
            });
    }
    chart.unmapped = pairs
        .iter()
        .filter(|p| !mapping.assignments.contains_key(&p.function))
        .cloned()
        .collect();
    chart
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{MockRule, MockScript};

    fn mapping(pairs: &[(&str, &str)]) -> MappingResult {
        MappingResult {
            assignments: pairs.iter().map(|(f, c)| (f.to_string(), c.to_string())).collect(),
            unmapped: Vec::new(),
        }
    }

    #[test]
    fn wheel_size_alternatives() {
        let gw = Gateway::mock(1);
        let pair = FunctionSolutionPair::new("wheel size", "19 inches");
        let chart = build_chart(&gw, &mapping(&[("wheel size", "wheel")]), &[pair], "car");
        let (comp, e) = chart.find("wheel size").unwrap();
        assert_eq!(comp, "wheel");
        assert_eq!(e.alternatives, ["20 inches".to_owned(), "18 inches".to_owned()]);
        assert!(chart.check_shape());
    }

    #[test]
    fn duplicate_answers_fall_back_to_placeholders() {
        let script = MockScript::new(0).rule(MockRule::text(
            Capability::Vision,
            "19 inches\n19 Inches",
        ));
        let gw = Gateway::mock_with_script(script);
        let pair = FunctionSolutionPair::new("wheel size", "19 inches");
        let alts = alternatives_for(&gw, &pair, "car");
        assert_eq!(alts, ["variant A of 19 inches".to_owned(), "variant B of 19 inches".to_owned()]);
        let stats = gw.stats();
        assert_eq!(stats.requests, 2);
    }

    #[test]
    fn second_query_fills_gap() {
        let script = MockScript::new(0)
            .rule(MockRule::text(Capability::Vision, "20 inches\n20 inches").when_param(params::ATTEMPT, 1))
            .rule(MockRule::text(Capability::Vision, "1. 20 inches\n2. 17 inches").when_param(params::ATTEMPT, 2));
        let gw = Gateway::mock_with_script(script);
        let pair = FunctionSolutionPair::new("wheel size", "19 inches");
        assert_eq!(
            alternatives_for(&gw, &pair, "car"),
            ["20 inches".to_owned(), "17 inches".to_owned()]
        );
    }

    #[test]
    fn unmapped_functions_kept_aside() {
        let gw = Gateway::mock(1);
        let pairs = [
            FunctionSolutionPair::new("wheel size", "19 inches"),
            FunctionSolutionPair::new("sunroof", "panoramic"),
        ];
        let chart = build_chart(&gw, &mapping(&[("wheel size", "wheel")]), &pairs, "car");
        assert_eq!(chart.entry_count(), 1);
        assert_eq!(chart.unmapped, vec![pairs[1].clone()]);
    }

    #[test]
    fn parse_strips_list_markers() {
        assert_eq!(
            parse_alternatives("- a\n\n2) b \n* c\n20 inches\n3.5 mm"),
            vec!["a", "b", "c", "20 inches", "3.5 mm"]
        );
    }
}
