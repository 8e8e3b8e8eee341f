//! Rule-based categorization of robot software repositories into function
//! types.
//!
//! Three fields are inspected in order: the repository name, the manifest
//! description and the filtered readme. The first field with any rule hit
//! decides; within a field the rule listed first wins.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_RULES: &str = include_str!("../data/rules.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FunctionType {
    Preprocessing,
    Localization,
    Mapping,
    Recognition,
    PathPlanning,
    GoalPlanner,
    PathTracking,
    Teleoperation,
    SpeechGeneration,
    Switcher,
    Mobile,
    Manipulator,
    Speaker,
    Sensors,
    Visualization,
    Support,
    Extension,
    Unknown,
}

impl FunctionType {
    pub const KNOWN: [FunctionType; 17] = [
        FunctionType::Preprocessing,
        FunctionType::Localization,
        FunctionType::Mapping,
        FunctionType::Recognition,
        FunctionType::PathPlanning,
        FunctionType::GoalPlanner,
        FunctionType::PathTracking,
        FunctionType::Teleoperation,
        FunctionType::SpeechGeneration,
        FunctionType::Switcher,
        FunctionType::Mobile,
        FunctionType::Manipulator,
        FunctionType::Speaker,
        FunctionType::Sensors,
        FunctionType::Visualization,
        FunctionType::Support,
        FunctionType::Extension,
    ];
}

impl fmt::Display for FunctionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for FunctionType {
    type Err = ClassifierError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim();
        FunctionType::KNOWN
            .into_iter()
            .chain([FunctionType::Unknown])
            .find(|t| t.to_string().eq_ignore_ascii_case(key))
            .ok_or_else(|| ClassifierError::Rules(format!("unknown function type `{key}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchedVia {
    Name,
    Manifest,
    Readme,
    None,
}

impl fmt::Display for MatchedVia {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("manifest of {repo}: {reason}")]
    ManifestParse { repo: String, reason: String },
    #[error("invalid rule set: {0}")]
    Rules(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Unprocessed repository inputs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawRepo {
    pub name: String,
    pub manifest_xml: Option<String>,
    pub readme_text: Option<String>,
}

/// The three pieces of key information.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RepoRecord {
    pub name: String,
    pub manifest_description: String,
    pub readme: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub function_type: FunctionType,
    pub matched_via: MatchedVia,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
}

#[derive(Debug, Clone)]
struct TypeRules {
    function_type: FunctionType,
    patterns: Vec<Regex>,
}

/// Ordered rule table; earlier entries take priority.
#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<TypeRules>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    rules: Vec<RuleEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleEntry {
    #[serde(rename = "type")]
    function_type: String,
    patterns: Vec<String>,
}

impl RuleSet {
    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let file: RuleFile = serde_json::from_str(text).map_err(|e| ClassifierError::Rules(e.to_string()))?;
        let mut rules = Vec::with_capacity(file.rules.len());
        for entry in file.rules {
            let function_type: FunctionType = entry.function_type.parse()?;
            if function_type == FunctionType::Unknown {
                return Err(ClassifierError::Rules("rules cannot target Unknown".into()));
            }
            if rules.iter().any(|r: &TypeRules| r.function_type == function_type) {
                return Err(ClassifierError::Rules(format!("{function_type} listed twice")));
            }
            let patterns = entry
                .patterns
                .iter()
                .map(|p| Regex::new(p).map_err(|e| ClassifierError::Rules(format!("{function_type}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if patterns.is_empty() {
                return Err(ClassifierError::Rules(format!("{function_type} has no patterns")));
            }
            rules.push(TypeRules {
                function_type,
                patterns,
            });
        }
        if let Some(missing) = FunctionType::KNOWN
            .iter()
            .find(|t| !rules.iter().any(|r| r.function_type == **t))
        {
            return Err(ClassifierError::Rules(format!("no rule for {missing}")));
        }
        Ok(Self { rules })
    }

    /// Priority index of a type (lower wins).
    pub fn priority_of(&self, t: FunctionType) -> Option<usize> {
        self.rules.iter().position(|r| r.function_type == t)
    }

    /// First matching type and pattern for one normalized text.
    fn match_text(&self, text: &str) -> Option<(FunctionType, &str)> {
        if text.is_empty() {
            return None;
        }
        self.rules.iter().find_map(|r| {
            r.patterns
                .iter()
                .find(|p| p.is_match(text))
                .map(|p| (r.function_type, p.as_str()))
        })
    }
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::from_json(DEFAULT_RULES).expect("shipped rules are valid")
    }
}

/// Lowercases and turns every non-alphanumeric run into one space.
pub fn normalize_text(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut gap = false;
    for c in s.chars() {
        if c.is_alphanumeric() {
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.extend(c.to_lowercase());
        } else {
            gap = true;
        }
    }
    out
}

fn description_regexes() -> (Regex, Regex, Regex) {
    (
        Regex::new(r"(?i)<description\b[^>]*/>").expect("valid"),
        Regex::new(r"(?i)<description\b[^>]*>").expect("valid"),
        Regex::new(r"(?i)</description\s*>").expect("valid"),
    )
}

/// Concatenated contents of every `<description>` element.
pub fn manifest_description(repo: &str, xml: &str) -> Result<String, ClassifierError> {
    let (self_closing, open, close) = description_regexes();
    let xml = self_closing.replace_all(xml, "");
    let opens: Vec<_> = open.find_iter(&xml).collect();
    let closes: Vec<_> = close.find_iter(&xml).collect();
    let err = |reason: String| ClassifierError::ManifestParse {
        repo: repo.to_string(),
        reason,
    };
    if opens.len() != closes.len() {
        return Err(err(format!(
            "{} <description> tags but {} </description> tags",
            opens.len(),
            closes.len()
        )));
    }
    let tag = Regex::new(r"<[^>]*>").expect("valid");
    let mut parts = Vec::new();
    for (i, (o, c)) in opens.iter().zip(&closes).enumerate() {
        let next_open = opens.get(i + 1).map(|n| n.start()).unwrap_or(usize::MAX);
        if c.start() < o.end() || c.start() > next_open {
            return Err(err("nested or misordered description tags".into()));
        }
        let inner = tag.replace_all(&xml[o.end()..c.start()], " ");
        let text = inner.split_whitespace().collect::<Vec<_>>().join(" ");
        if !text.is_empty() {
            parts.push(text);
        }
    }
    Ok(parts.join(" "))
}

fn is_section_heading(line: &str) -> Option<String> {
    let t = line.trim();
    let title = if let Some(rest) = t.strip_prefix('#') {
        rest.trim_start_matches('#').trim()
    } else {
        // "1. Requirements" / "2) Installation"
        let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
        if digits == 0 {
            return None;
        }
        let rest = &t[digits..];
        let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
        let rest = rest.trim();
        if rest.is_empty() || rest.split_whitespace().count() > 4 {
            return None;
        }
        rest
    };
    Some(title.to_lowercase())
}

fn is_interference_section(title: &str) -> bool {
    [
        "requirement",
        "installation",
        "install",
        "dependencies",
        "prerequisite",
        "building",
    ]
    .iter()
    .any(|k| title.starts_with(k))
}

/// Drops code blocks, shell prompts and installation/requirements
/// sections, keeping the descriptive prose.
pub fn filter_readme(text: &str) -> String {
    let mut kept = Vec::new();
    let mut fence: Option<&str> = None;
    let mut skipping_section = false;
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(marker) = fence {
            if trimmed.starts_with(marker) {
                fence = None;
            }
            continue;
        }
        if trimmed.starts_with("```") || trimmed.starts_with("~~~") {
            fence = Some(&trimmed[..3]);
            continue;
        }
        if let Some(title) = is_section_heading(line) {
            skipping_section = is_interference_section(&title);
            if skipping_section {
                continue;
            }
        }
        if skipping_section {
            continue;
        }
        if line.starts_with("    ") || line.starts_with('\t') || trimmed.starts_with('$') {
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        kept.push(trimmed.trim_end());
    }
    kept.join("\n")
}

pub fn extract_key_info(raw: &RawRepo) -> Result<RepoRecord, ClassifierError> {
    let manifest_description = match &raw.manifest_xml {
        Some(xml) => manifest_description(&raw.name, xml)?,
        None => String::new(),
    };
    Ok(RepoRecord {
        name: raw.name.trim().to_string(),
        manifest_description,
        readme: raw.readme_text.as_deref().map(filter_readme).unwrap_or_default(),
    })
}

pub fn classify(rec: &RepoRecord, rules: &RuleSet) -> Classification {
    let fields = [
        (MatchedVia::Name, &rec.name),
        (MatchedVia::Manifest, &rec.manifest_description),
        (MatchedVia::Readme, &rec.readme),
    ];
    for (via, text) in fields {
        if let Some((function_type, pattern)) = rules.match_text(&normalize_text(text)) {
            return Classification {
                function_type,
                matched_via: via,
                pattern: Some(pattern.to_string()),
            };
        }
    }
    Classification {
        function_type: FunctionType::Unknown,
        matched_via: MatchedVia::None,
        pattern: None,
    }
}

fn read_optional(path: &Path) -> Result<Option<String>, ClassifierError> {
    match fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(ClassifierError::Io {
            path: path.display().to_string(),
            source,
        }),
    }
}

/// Reads a corpus laid out as one directory per repository holding any of
/// `name.txt`, `package.xml` and `README.md`. Sorted by directory name.
pub fn load_corpus(dir: &Path) -> Result<Vec<RawRepo>, ClassifierError> {
    let io = |source| ClassifierError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut dirs: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::with_capacity(dirs.len());
    for d in dirs {
        let fallback = d
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let name = read_optional(&d.join("name.txt"))?
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or(fallback);
        out.push(RawRepo {
            name,
            manifest_xml: read_optional(&d.join("package.xml"))?,
            readme_text: read_optional(&d.join("README.md"))?,
        });
    }
    Ok(out)
}
