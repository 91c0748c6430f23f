use std::path::{Path, PathBuf};

use super::WorldError;

pub const HIGH_LEVEL_TEMPLATE: &str = "\
You are an expert merchandiser reviewing bundle predictions.

Session items (id | title | category):
{SESSION_ITEMS}

Step 1. Propose candidate bundles for this session. A bundle is a set of at
least two items from the list above that a shopper would buy together.

Step 2. Compare your candidate bundles against the ground-truth bundles below.
For every candidate that does not match, explain what went wrong (wrong items,
missing items, unrelated categories mixed together, too few items).

Ground-truth bundles:
{GROUND_TRUTH}

Step 3. Summarize the mistakes as short, general bundling rules that would
apply to any session, one rule per line, prefixed with \"RULE:\".
";

pub const FINE_GRAINED_TEMPLATE: &str = "\
You are an expert merchandiser explaining why items belong together.

Session items (id | title | category):
{SESSION_ITEMS}

Ground-truth bundles:
{GROUND_TRUTH}

Think step by step. For each ground-truth bundle, state the shopping intent
the items serve and why each item fits that intent, using the titles and
categories. Then name the intent of every bundle on its own line, prefixed
with \"INTENT:\".
";

/// Writes the two teacher prompt templates into `out_dir` and returns their paths.
pub fn emit_prompt_templates(out_dir: &Path) -> Result<Vec<PathBuf>, WorldError> {
    std::fs::create_dir_all(out_dir)?;
    let files = [
        ("high_level_reflection.txt", HIGH_LEVEL_TEMPLATE),
        ("fine_grained_rationale.txt", FINE_GRAINED_TEMPLATE),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_have_placeholders_and_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_prompt_templates(dir.path()).unwrap();
        let first: Vec<String> = paths.iter().map(|p| std::fs::read_to_string(p).unwrap()).collect();
        for body in &first {
            assert!(body.contains("{SESSION_ITEMS}") && body.contains("{GROUND_TRUTH}"));
        }
        assert!(first[0].contains("Compare your candidate bundles against the ground-truth"));
        emit_prompt_templates(dir.path()).unwrap();
        let second: Vec<String> = paths.iter().map(|p| std::fs::read_to_string(p).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        assert!(matches!(emit_prompt_templates(&file.join("sub")), Err(WorldError::Io(_))));
    }
}
