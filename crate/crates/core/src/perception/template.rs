use std::sync::OnceLock;

use regex::Regex;

pub const SYSTEM: &str = include_str!("../../templates/system.txt");
pub const KNOWLEDGE: &str = include_str!("../../templates/knowledge.txt");
pub const HAPTIC: &str = include_str!("../../templates/haptic.txt");
pub const PAIRWISE: &str = include_str!("../../templates/pairwise.txt");
pub const SCENE: &str = include_str!("../../templates/scene.txt");
pub const CONTAINER: &str = include_str!("../../templates/container.txt");
pub const REASONING: &str = include_str!("../../templates/reasoning.txt");
pub const EXAMPLE: &str = include_str!("../../templates/example.txt");

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

/// Names of the placeholders in `template`, in order of appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    placeholder().captures_iter(template).map(|c| c.get(1).unwrap().as_str()).collect()
}

/// Substitutes `{name}` placeholders. Values are inserted verbatim and not
/// rescanned; a placeholder without a value is an error.
pub fn fill(template: &str, vars: &[(&str, &str)]) -> Result<String, String> {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for caps in placeholder().captures_iter(template) {
        let whole = caps.get(0).unwrap();
        let name = caps.get(1).unwrap().as_str();
        let value = vars.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).ok_or_else(|| format!("no value for {{{name}}}"))?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_named_placeholders() {
        assert_eq!(fill("a {x} b {y} {x}", &[("x", "1"), ("y", "{x}")]).unwrap(), "a 1 b {x} 1");
        assert!(fill("{missing}", &[]).is_err());
        assert_eq!(fill("no braces", &[]).unwrap(), "no braces");
    }

    #[test]
    fn bundled_templates_use_known_placeholders() {
        let known = ["action_context", "knowledge_block", "question", "actions", "context", "example"];
        for t in [SYSTEM, KNOWLEDGE, HAPTIC, PAIRWISE, SCENE, CONTAINER, REASONING, EXAMPLE] {
            for p in placeholders(t) {
                assert!(known.contains(&p), "unknown placeholder {p}");
            }
        }
        assert_eq!(placeholders(HAPTIC), ["action_context", "knowledge_block"]);
        assert_eq!(placeholders(PAIRWISE), ["knowledge_block"]);
        assert!(placeholders(SCENE).is_empty());
        assert!(placeholders(CONTAINER).is_empty());
    }
}
