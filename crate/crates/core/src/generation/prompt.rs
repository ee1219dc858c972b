//! Prompt rendering for record generation and rule refinement.
//!
//! Templates are plain text with `{rules}`, `{examples}`, `{count}` and
//! `{format}` placeholders. The default templates rebuild the usual blocks of
//! an in-context generation prompt: framing, rules, sample records, the
//! generation instruction and the output format.

use crate::discovery::PromptExample;
use crate::error::{Error, Result};
use crate::table::{write_csv_to, Schema, Table};

pub const DEFAULT_GENERATE_TEMPLATE: &str = "\
You generate new records for a tabular dataset. The dataset mixes several \
distributions; each rule below describes one of them using comparisons on the \
attributes.

Rules (the first is the most representative):
{rules}

Sample records for each rule:
{examples}

Write {count} new, realistic records. Every record must satisfy at least one \
of the rules above and follow the same relationship between the attributes \
and the target as the sample records of its rule.

{format}
";

pub const DEFAULT_REFINE_TEMPLATE: &str = "\
You help steer data generation for a tabular dataset. The current rules \
describe distributions in the data. The candidate rules were derived from \
newly generated records; each is followed by the change in validation error \
it caused (positive means the records helped).

Current rules:
{rules}

Candidate rules:
{examples}

Propose up to {count} new rules that would guide the generation of records \
that improve validation performance.

{format}
";

/// Approximate token count: one token per four characters.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptConfig {
    pub generate_template: String,
    pub refine_template: String,
    pub token_budget: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            generate_template: DEFAULT_GENERATE_TEMPLATE.to_string(),
            refine_template: DEFAULT_REFINE_TEMPLATE.to_string(),
            token_budget: 8000,
        }
    }
}

fn fill(template: &str, rules: &str, examples: &str, count: usize, format: &str) -> String {
    template
        .replace("{rules}", rules)
        .replace("{examples}", examples)
        .replace("{count}", &count.to_string())
        .replace("{format}", format)
}

fn csv_block(t: &Table) -> String {
    let mut buf = Vec::new();
    // writing to a Vec cannot fail
    write_csv_to(t, &mut buf).expect("in-memory csv");
    format!("```csv\n{}```", String::from_utf8_lossy(&buf))
}

pub fn format_instruction(schema: &Schema) -> String {
    format!(
        "Answer with a single ```csv fenced block whose first line is the header `{}`, \
         followed by one record per line. Do not add commentary.",
        schema.header().join(",")
    )
}

fn render_with(examples: &[PromptExample], rows: &[usize], count: usize, template: &str) -> String {
    let schema = examples[0].rows.schema();
    let rules: Vec<String> = examples.iter().enumerate().map(|(i, e)| format!("{}. {}", i + 1, e.rule)).collect();
    let blocks: Vec<String> = examples
        .iter()
        .zip(rows)
        .enumerate()
        .map(|(i, (e, &n))| {
            let keep: Vec<usize> = (0..n.min(e.rows.len())).collect();
            format!("Rule {}:\n{}", i + 1, csv_block(&e.rows.select(&keep)))
        })
        .collect();
    fill(template, &rules.join("\n"), &blocks.join("\n\n"), count, &format_instruction(schema))
}

/// Renders a generation prompt. When the text exceeds the token budget, sample
/// rows are dropped one at a time from the rule showing the most rows until it
/// fits; every rule keeps at least one row and rules are never dropped.
pub fn render_prompt(examples: &[PromptExample], count: usize, cfg: &PromptConfig) -> Result<String> {
    if examples.is_empty() {
        return Err(Error::Prompt("no examples to render".into()));
    }
    if examples.iter().any(|e| e.rows.is_empty()) {
        return Err(Error::Prompt("every rule needs at least one sample row".into()));
    }
    let mut rows: Vec<usize> = examples.iter().map(|e| e.rows.len()).collect();
    loop {
        let text = render_with(examples, &rows, count, &cfg.generate_template);
        if estimate_tokens(&text) <= cfg.token_budget {
            return Ok(text);
        }
        // last index among the maxima, so earlier (more representative) rules
        // keep their rows longest
        let (i, &most) = rows.iter().enumerate().rev().max_by_key(|(_, n)| **n).unwrap();
        if most <= 1 {
            return Err(Error::Prompt(format!(
                "token budget {} is too small for {} rule(s) with one row each (needs {})",
                cfg.token_budget,
                examples.len(),
                estimate_tokens(&text)
            )));
        }
        rows[i] -= 1;
    }
}

pub fn refine_format(schema: &Schema) -> String {
    format!(
        "Answer with one rule per line using the same syntax as above, for example \
         `(a > 5 AND b <= 3) OR (c = \"x\")`. Never constrain the target attribute `{}`.",
        schema.target_name()
    )
}

/// Renders a rule-refinement prompt from the current rules and the candidate
/// rules with their validation improvement.
pub fn render_refine_prompt(
    schema: &Schema,
    context: &[String],
    candidates: &[(String, f64)],
    count: usize,
    cfg: &PromptConfig,
) -> Result<String> {
    if context.is_empty() {
        return Err(Error::Prompt("no context rules to refine".into()));
    }
    let rules: Vec<String> = context.iter().enumerate().map(|(i, r)| format!("{}. {r}", i + 1)).collect();
    let cands: Vec<String> = candidates.iter().map(|(r, d)| format!("- {r}  [improvement {d:+.6}]")).collect();
    let body = if cands.is_empty() { "(none)".to_string() } else { cands.join("\n") };
    let text = fill(&cfg.refine_template, &rules.join("\n"), &body, count, &refine_format(schema));
    if estimate_tokens(&text) > cfg.token_budget {
        return Err(Error::Prompt(format!("refinement prompt exceeds the token budget of {}", cfg.token_budget)));
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{Conjunction, Dgr, Op, Predicate};
    use crate::table::{Attribute, Kind, Provenance, Task, Value};
    use crate::tree::ModelId;
    use std::sync::Arc;

    fn ex(lo: f64, n: usize, representative: bool) -> PromptExample {
        let s = Arc::new(
            Schema::new(
                vec![Attribute::new("a", Kind::Numeric), Attribute::new("y", Kind::Numeric)],
                "y",
                Task::Classification,
            )
            .unwrap(),
        );
        let rows = (0..n).map(|i| vec![Value::Num(lo + 1.0 + i as f64), Value::Num(1.0)]).collect();
        PromptExample {
            model_id: ModelId(0),
            rule: Dgr::from(Conjunction::new(vec![Predicate::num("a", Op::Gt, lo)])),
            rows: Table::new(s, rows, Provenance::Original).unwrap(),
            representative,
        }
    }

    fn data_lines(text: &str) -> usize {
        text.lines().filter(|l| l.contains(",1") && !l.contains('`') && !l.starts_with('a')).count()
    }

    #[test]
    fn one_rule_one_row() {
        let e = ex(5.0, 1, true);
        let p = render_prompt(std::slice::from_ref(&e), 10, &PromptConfig::default()).unwrap();
        assert_eq!(p.matches(&e.rule.to_string()).count(), 1);
        assert_eq!(data_lines(&p), 1);
        assert!(p.contains("Write 10 new"));
        assert_eq!(p, render_prompt(&[e], 10, &PromptConfig::default()).unwrap());
    }

    #[test]
    fn truncation_keeps_every_rule() {
        let es = vec![ex(0.0, 30, true), ex(100.0, 30, false), ex(200.0, 30, false)];
        let full = render_prompt(&es, 5, &PromptConfig::default()).unwrap();
        assert_eq!(data_lines(&full), 90);
        let budget = estimate_tokens(&full) - 40;
        let cfg = PromptConfig { token_budget: budget, ..Default::default() };
        let p = render_prompt(&es, 5, &cfg).unwrap();
        assert!(estimate_tokens(&p) <= budget);
        for e in &es {
            assert_eq!(p.matches(&e.rule.to_string()).count(), 1);
        }
        // rows are trimmed evenly: per-rule counts differ by at most one
        let per_rule: Vec<usize> = p.split("Rule ").skip(1).map(data_lines).collect();
        assert_eq!(per_rule.len(), 3);
        let (lo, hi) = (per_rule.iter().min().unwrap(), per_rule.iter().max().unwrap());
        assert!(hi - lo <= 1 && *hi < 30, "{per_rule:?}");
    }

    #[test]
    fn tiny_budget_is_a_prompt_error() {
        let cfg = PromptConfig { token_budget: 10, ..Default::default() };
        assert!(matches!(render_prompt(&[ex(0.0, 3, true)], 5, &cfg), Err(Error::Prompt(_))));
        assert!(matches!(render_prompt(&[], 5, &PromptConfig::default()), Err(Error::Prompt(_))));
    }

    #[test]
    fn refine_prompt_lists_rules_and_deltas() {
        let e = ex(0.0, 1, true);
        let p = render_refine_prompt(
            e.rows.schema(),
            &["(a > 0)".into()],
            &[("(a > 3)".into(), 0.05)],
            3,
            &PromptConfig::default(),
        )
        .unwrap();
        assert!(p.contains("1. (a > 0)"));
        assert!(p.contains("(a > 3)  [improvement +0.050000]"));
        assert!(p.contains("attribute `y`"));
    }
}
