//! Prompt templates, the tag pool, and the seed-generation tag grid.
//!
//! Template bodies live as text assets under `assets/templates/` and are
//! embedded verbatim at compile time; a manifest maps each template id to
//! its file, placeholder list, and — for filter templates — the verdict
//! value that means "keep". Rendering is pure substitution: no trimming,
//! re-wrapping, or escaping of the template body.
//!
//! Filter polarity is deliberately explicit: the document pre-screen
//! prompts answer '1' when content is *bad*, while the instruction
//! filters answer '1' when an instruction is *good*. Call sites read the
//! polarity from the manifest instead of hardcoding either convention.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown template id {0:?}")]
    UnknownTemplate(String),
    #[error("template {template}: missing binding for {{{placeholder}}}")]
    MissingBinding { template: String, placeholder: String },
    #[error("template {template}: binding {{{placeholder}}} is not a placeholder")]
    ExtraBinding { template: String, placeholder: String },
    #[error("think_different needs exactly 5 exemplars, got {0}")]
    ExemplarCount(usize),
    #[error("document text is empty")]
    EmptyDocument,
}

macro_rules! template_ids {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Identifier for each built-in template.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum TemplateId {
            $($variant,)+
        }

        impl TemplateId {
            pub const ALL: &'static [TemplateId] = &[$(TemplateId::$variant,)+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $(TemplateId::$variant => $name,)+
                }
            }

            pub fn from_str(s: &str) -> Option<TemplateId> {
                match s {
                    $($name => Some(TemplateId::$variant),)+
                    _ => None,
                }
            }
        }
    };
}

template_ids! {
    PrescreenUseless => "prescreen_useless",
    PrescreenPrivacy => "prescreen_privacy",
    PrescreenAd => "prescreen_ad",
    InstrFilterTemporal => "instr_filter_temporal",
    InstrFilterPrivacy => "instr_filter_privacy",
    InstrFilterLogic => "instr_filter_logic",
    SeedQuestion => "seed_question",
    ThinkDifferent => "think_different",
    QToA => "q_to_a",
    QdocToA => "qdoc_to_a",
    FaithfulnessEval => "faithfulness_eval",
    QualityScorer => "quality_scorer",
    ComplexityScorer => "complexity_scorer",
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const MANIFEST: &str = include_str!("../assets/templates/manifest.json");

const ASSETS: &[(&str, &str)] = &[
    ("prescreen_useless.txt", include_str!("../assets/templates/prescreen_useless.txt")),
    ("prescreen_privacy.txt", include_str!("../assets/templates/prescreen_privacy.txt")),
    ("prescreen_ad.txt", include_str!("../assets/templates/prescreen_ad.txt")),
    ("instr_filter_temporal.txt", include_str!("../assets/templates/instr_filter_temporal.txt")),
    ("instr_filter_privacy.txt", include_str!("../assets/templates/instr_filter_privacy.txt")),
    ("instr_filter_logic.txt", include_str!("../assets/templates/instr_filter_logic.txt")),
    ("seed_question.txt", include_str!("../assets/templates/seed_question.txt")),
    ("think_different.txt", include_str!("../assets/templates/think_different.txt")),
    ("q_to_a.txt", include_str!("../assets/templates/q_to_a.txt")),
    ("qdoc_to_a.txt", include_str!("../assets/templates/qdoc_to_a.txt")),
    ("faithfulness_eval.txt", include_str!("../assets/templates/faithfulness_eval.txt")),
    ("quality_scorer.txt", include_str!("../assets/templates/quality_scorer.txt")),
    ("complexity_scorer.txt", include_str!("../assets/templates/complexity_scorer.txt")),
];

#[derive(Deserialize)]
struct ManifestFile {
    templates: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct ManifestEntry {
    id: String,
    file: String,
    placeholders: Vec<String>,
    good_verdict: Option<u8>,
}

/// A loaded template: body bytes plus its declared placeholder set.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: &'static str,
    pub placeholders: Vec<String>,
    /// For filter templates, the verdict value that means "keep".
    pub good_verdict: Option<u8>,
}

/// A fully rendered prompt with its binding record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template_id: TemplateId,
    pub text: String,
    pub bindings: BTreeMap<String, String>,
}

/// Immutable registry of all built-in templates.
pub struct PromptLibrary {
    templates: HashMap<TemplateId, PromptTemplate>,
}

static BUILTIN: LazyLock<PromptLibrary> = LazyLock::new(|| {
    let manifest: ManifestFile =
        serde_json::from_str(MANIFEST).expect("template manifest parses");
    let assets: HashMap<&str, &'static str> = ASSETS.iter().copied().collect();
    let mut templates = HashMap::new();
    for entry in manifest.templates {
        let id = TemplateId::from_str(&entry.id)
            .unwrap_or_else(|| panic!("manifest names unknown template {}", entry.id));
        let body = assets
            .get(entry.file.as_str())
            .unwrap_or_else(|| panic!("missing template asset {}", entry.file));
        templates.insert(
            id,
            PromptTemplate {
                id,
                body,
                placeholders: entry.placeholders,
                good_verdict: entry.good_verdict,
            },
        );
    }
    assert_eq!(templates.len(), TemplateId::ALL.len(), "manifest covers every template id");
    PromptLibrary { templates }
});

impl PromptLibrary {
    pub fn builtin() -> &'static PromptLibrary {
        &BUILTIN
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    /// Verdict value meaning "keep" for a filter template.
    pub fn good_verdict(&self, id: TemplateId) -> Option<u8> {
        self.templates[&id].good_verdict
    }

    /// Substitute placeholders. Bindings must cover the template's
    /// placeholder set exactly; binding values are never re-scanned, so a
    /// value containing `{...}` cannot trigger further substitution.
    pub fn render(
        &self,
        id: TemplateId,
        bindings: &[(&str, &str)],
    ) -> Result<RenderedPrompt, PromptError> {
        let template = self.get(id);
        let map: BTreeMap<&str, &str> = bindings.iter().copied().collect();
        for (key, _) in bindings {
            if !template.placeholders.iter().any(|p| p == key) {
                return Err(PromptError::ExtraBinding {
                    template: id.as_str().to_string(),
                    placeholder: key.to_string(),
                });
            }
        }
        for placeholder in &template.placeholders {
            if !map.contains_key(placeholder.as_str()) {
                return Err(PromptError::MissingBinding {
                    template: id.as_str().to_string(),
                    placeholder: placeholder.clone(),
                });
            }
        }

        let body = template.body;
        let mut text = String::with_capacity(body.len());
        let mut rest = body;
        while let Some(open) = rest.find('{') {
            text.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if map.contains_key(&after[..close]) => {
                    text.push_str(map[&after[..close]]);
                    rest = &after[close + 1..];
                }
                _ => {
                    // literal brace, not one of ours
                    text.push('{');
                    rest = after;
                }
            }
        }
        text.push_str(rest);

        Ok(RenderedPrompt {
            template_id: id,
            text,
            bindings: bindings.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        })
    }
}

/// One requirement tag: a short label for bookkeeping plus the full text
/// substituted into the seed template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tag {
    pub label: &'static str,
    pub text: &'static str,
}

/// Labels of the grid cell that produced a seed instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagTriple {
    pub difficulty: String,
    pub task_type: String,
    pub style: String,
}

pub const DIFFICULTY_TAGS: &[Tag] = &[
    Tag {
        label: "reasoning",
        text: "It should be complex and requires multiple-step reasoning to solve.",
    },
    Tag {
        label: "critical_thinking",
        text: "It demands critical thinking skills to analyze from various perspectives and evaluate multiple solutions.",
    },
    Tag {
        label: "creativity",
        text: "It necessitates creative thinking to devise innovative solutions beyond conventional approaches.",
    },
    Tag {
        label: "interdisciplinary",
        text: "It demands integrating knowledge from diverse disciplines to address its multifaceted nature.",
    },
];

pub const TASK_TYPE_TAGS: &[Tag] = &[
    Tag {
        label: "nli",
        text: "It is a Natural language inference question: Assessing if evidence supports a conclusion.",
    },
    Tag {
        label: "commonsense",
        text: "It is a Commonsense question: Predicting outcomes based on everyday knowledge.",
    },
    Tag {
        label: "sentiment",
        text: "It is a Sentiment analysis question: Determining emotional response to a given scenario.",
    },
    Tag {
        label: "paraphrase",
        text: "It is a Paraphrasing question: Rewording a statement while retaining its meaning.",
    },
    Tag {
        label: "close_book_qa",
        text: "It is a Close-book QA question: Answering factual queries using pre-existing knowledge.",
    },
    Tag {
        label: "struct2text",
        text: "It is a Structure to text question: Describing a process or concept in written form.",
    },
    Tag {
        label: "summarization",
        text: "It is a Summarization question: Condensing key information from a larger text.",
    },
    Tag {
        label: "translation",
        text: "It is a Translation question: Converting text from one language to another.",
    },
    Tag {
        label: "implicit_reasoning",
        text: "It is a Implicit reasoning question: Inferring reasons behind common behaviors.",
    },
    Tag {
        label: "text_categorization",
        text: "It is a Text categorization question: Identifying defining characteristics of a given text type.",
    },
];

pub const STYLE_TAGS: &[Tag] = &[
    Tag {
        label: "command",
        text: "It should be in the style of a command or imperative. For example, 'Write a paragraph about...' or 'Describe the...'",
    },
    Tag {
        label: "question",
        text: "It should be in the style of a question or interrogative. For example, 'What is the...?' or 'How do you...?'",
    },
];

/// The fixed 4 x 10 x 2 tag pool.
#[derive(Debug, Clone, Copy)]
pub struct TagPool {
    pub difficulty_tags: &'static [Tag],
    pub task_type_tags: &'static [Tag],
    pub style_tags: &'static [Tag],
}

impl TagPool {
    pub fn standard() -> Self {
        TagPool {
            difficulty_tags: DIFFICULTY_TAGS,
            task_type_tags: TASK_TYPE_TAGS,
            style_tags: STYLE_TAGS,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.difficulty_tags.len() * self.task_type_tags.len() * self.style_tags.len()
    }
}

/// A grid cell: the tags that parameterize it plus the rendered prompt.
#[derive(Debug, Clone)]
pub struct GridPrompt {
    pub tags: TagTriple,
    pub prompt: RenderedPrompt,
}

/// Enumerate all 80 seed prompts for a document, difficulty outermost,
/// then task type, then style.
pub fn seed_prompt_grid(
    library: &PromptLibrary,
    doc: &Document,
) -> Result<Vec<GridPrompt>, PromptError> {
    if doc.text.trim().is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    let pool = TagPool::standard();
    let mut out = Vec::with_capacity(pool.grid_size());
    for difficulty in pool.difficulty_tags {
        for task_type in pool.task_type_tags {
            for style in pool.style_tags {
                let prompt = library.render(
                    TemplateId::SeedQuestion,
                    &[
                        ("characteristic", difficulty.text),
                        ("type", style.text),
                        ("classify", task_type.text),
                        ("text", &doc.text),
                    ],
                )?;
                out.push(GridPrompt {
                    tags: TagTriple {
                        difficulty: difficulty.label.to_string(),
                        task_type: task_type.label.to_string(),
                        style: style.label.to_string(),
                    },
                    prompt,
                });
            }
        }
    }
    Ok(out)
}

/// Render the few-shot augmentation prompt: five exemplars bound in order
/// plus the document in the paragraph slot. `extra_requirement` fills the
/// `{command}` slot and defaults to the empty string.
pub fn think_different_prompt(
    library: &PromptLibrary,
    doc: &Document,
    exemplars: &[&str],
    extra_requirement: Option<&str>,
) -> Result<RenderedPrompt, PromptError> {
    if exemplars.len() != 5 {
        return Err(PromptError::ExemplarCount(exemplars.len()));
    }
    library.render(
        TemplateId::ThinkDifferent,
        &[
            ("command", extra_requirement.unwrap_or("")),
            ("seed1", exemplars[0]),
            ("seed2", exemplars[1]),
            ("seed3", exemplars[2]),
            ("seed4", exemplars[3]),
            ("seed5", exemplars[4]),
            ("text", &doc.text),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Document {
        Document::from_text(text.to_string(), "s")
    }

    #[test]
    fn every_template_loads_with_declared_placeholders() {
        let lib = PromptLibrary::builtin();
        for &id in TemplateId::ALL {
            let t = lib.get(id);
            assert!(!t.body.is_empty());
            for p in &t.placeholders {
                assert!(
                    t.body.contains(&format!("{{{p}}}")),
                    "{id}: placeholder {{{p}}} absent from body"
                );
            }
        }
    }

    #[test]
    fn filter_polarity_is_explicit() {
        let lib = PromptLibrary::builtin();
        assert_eq!(lib.good_verdict(TemplateId::PrescreenUseless), Some(0));
        assert_eq!(lib.good_verdict(TemplateId::PrescreenPrivacy), Some(0));
        assert_eq!(lib.good_verdict(TemplateId::PrescreenAd), Some(0));
        assert_eq!(lib.good_verdict(TemplateId::InstrFilterTemporal), Some(1));
        assert_eq!(lib.good_verdict(TemplateId::InstrFilterPrivacy), Some(1));
        assert_eq!(lib.good_verdict(TemplateId::InstrFilterLogic), Some(1));
        assert_eq!(lib.good_verdict(TemplateId::QToA), None);
    }

    #[test]
    fn render_substitutes_without_touching_the_body() {
        let lib = PromptLibrary::builtin();
        let out = lib.render(TemplateId::QToA, &[("question", "Q")]).unwrap();
        assert!(out.text.contains("### QUESTION: Q"));
        let again = lib.render(TemplateId::QToA, &[("question", "Q")]).unwrap();
        assert_eq!(out.text, again.text);
    }

    #[test]
    fn render_checks_binding_coverage() {
        let lib = PromptLibrary::builtin();
        let err = lib.render(TemplateId::QdocToA, &[("question", "Q")]).unwrap_err();
        assert!(matches!(err, PromptError::MissingBinding { .. }));
        let err = lib
            .render(TemplateId::QToA, &[("question", "Q"), ("doc", "D")])
            .unwrap_err();
        assert!(matches!(err, PromptError::ExtraBinding { .. }));
    }

    #[test]
    fn binding_values_are_not_rescanned() {
        let lib = PromptLibrary::builtin();
        let out = lib.render(TemplateId::QToA, &[("question", "use {question} wisely")]).unwrap();
        assert!(out.text.contains("### QUESTION: use {question} wisely"));
    }

    #[test]
    fn grid_has_80_cells_in_listing_order() {
        let lib = PromptLibrary::builtin();
        let grid = seed_prompt_grid(lib, &doc("some paragraph")).unwrap();
        assert_eq!(grid.len(), 80);
        let first = &grid[0];
        assert_eq!(first.tags.difficulty, "reasoning");
        assert_eq!(first.tags.task_type, "nli");
        assert_eq!(first.tags.style, "command");
        assert!(first.prompt.text.contains(DIFFICULTY_TAGS[0].text));
        assert!(first.prompt.text.contains(TASK_TYPE_TAGS[0].text));
        assert!(first.prompt.text.contains(STYLE_TAGS[0].text));
        let last = &grid[79];
        assert_eq!(last.tags.difficulty, "interdisciplinary");
        assert_eq!(last.tags.task_type, "text_categorization");
        assert_eq!(last.tags.style, "question");
        // same doc text renders the same grid
        let grid2 = seed_prompt_grid(lib, &doc("some paragraph")).unwrap();
        assert_eq!(grid[3].prompt.text, grid2[3].prompt.text);
    }

    #[test]
    fn tag_pool_counts_are_fixed() {
        let pool = TagPool::standard();
        assert_eq!(pool.difficulty_tags.len(), 4);
        assert_eq!(pool.task_type_tags.len(), 10);
        assert_eq!(pool.style_tags.len(), 2);
        assert_eq!(pool.grid_size(), 80);
    }

    #[test]
    fn think_different_binds_exemplars_in_order() {
        let lib = PromptLibrary::builtin();
        let exemplars = ["e one", "e two", "e three", "e four", "e five"];
        let out = think_different_prompt(lib, &doc("the paragraph"), &exemplars, None).unwrap();
        for (i, e) in exemplars.iter().enumerate() {
            assert!(out.text.contains(&format!("<Example{}>: {e}", i + 1)));
        }
        assert!(out.text.contains("the paragraph"));

        let err = think_different_prompt(lib, &doc("d"), &exemplars[..4], None).unwrap_err();
        assert!(matches!(err, PromptError::ExemplarCount(4)));
    }

    #[test]
    fn think_different_extra_requirement_fills_command_slot() {
        let lib = PromptLibrary::builtin();
        let exemplars = ["a", "b", "c", "d", "e"];
        let plain =
            think_different_prompt(lib, &doc("p"), &exemplars, None).unwrap();
        let with_line =
            think_different_prompt(lib, &doc("p"), &exemplars, Some("Keep it under 40 words."))
                .unwrap();
        assert!(with_line.text.contains("Keep it under 40 words."));
        assert!(!plain.text.contains("Keep it under 40 words."));
    }
}
