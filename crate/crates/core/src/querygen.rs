//! Boundary-question generation: one start question, one end question and
//! a short description per action class, produced by a chat model and
//! cached on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::backends::http::{EndpointConfig, HttpEndpoint};
use crate::domain::io::{read_json_file, write_json_file};
use crate::domain::{ActionClass, QueryTriple};
use crate::error::{Error, Result};
use crate::exec::Exec;

/// Default instruction sent to the language model. `{class}` is replaced by
/// the class name.
pub const DEFAULT_QUERY_TEMPLATE: &str = "We want to find the action \"{class}\" in an untrimmed video by asking a vision-language model questions about single frames.\n\
Write:\n\
1. q_start: a question, answerable with only yes or no, asking whether the frame shows what the archetypal start of the action looks like.\n\
2. q_end: a question, answerable with only yes or no, asking whether the frame shows what the archetypal end of the action looks like.\n\
3. q_desc: one short declarative sentence describing the action.\n\
Reply with only a JSON object with exactly the keys \"q_start\", \"q_end\" and \"q_desc\".";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryGenConfig {
    pub endpoint: EndpointConfig,
    pub prompt_template: String,
    pub cache_path: PathBuf,
    pub max_in_flight: usize,
}

impl Default for QueryGenConfig {
    fn default() -> Self {
        Self {
            endpoint: EndpointConfig {
                url: "https://api.openai.com/v1/chat/completions".into(),
                model: "gpt-4o-2024-11-20".into(),
                ..EndpointConfig::default()
            },
            prompt_template: DEFAULT_QUERY_TEMPLATE.into(),
            cache_path: PathBuf::from("queries_cache.json"),
            max_in_flight: 4,
        }
    }
}

impl QueryGenConfig {
    pub fn validate(&self) -> Result<()> {
        match self.prompt_template.matches("{class}").count() {
            1 => Ok(()),
            n => Err(Error::Config(format!(
                "query prompt template must contain {{class}} exactly once, found {n}"
            ))),
        }
    }

    pub fn template_hash(&self) -> String {
        let digest = Sha256::digest(self.prompt_template.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn render(&self, class_name: &str) -> String {
        self.prompt_template.replace("{class}", class_name)
    }
}

/// Checks the shape of a generated triple; returns every violation found.
pub fn validate_triple(t: &QueryTriple) -> std::result::Result<(), Vec<String>> {
    let mut v = Vec::new();
    for (name, text) in [("q_start", &t.q_start), ("q_end", &t.q_end), ("q_desc", &t.q_desc)] {
        if text.trim().is_empty() {
            v.push(format!("empty {name}"));
        }
    }
    for (name, text) in [("q_start", &t.q_start), ("q_end", &t.q_end)] {
        if !text.trim().is_empty() && !text.trim_end().ends_with('?') {
            v.push(format!("{name} not interrogative"));
        }
    }
    if t.q_desc.trim_end().ends_with('?') {
        v.push("q_desc interrogative".into());
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

/// A chat model that returns the assistant's text for a conversation.
pub trait ChatModel: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;
}

/// Chat-completions client at temperature 0.
#[derive(Debug)]
pub struct HttpChat {
    endpoint: HttpEndpoint,
}

impl HttpChat {
    pub fn new(cfg: EndpointConfig) -> Self {
        Self {
            endpoint: HttpEndpoint::new(cfg),
        }
    }
}

impl ChatModel for HttpChat {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let body = json!({
            "model": self.endpoint.config().model,
            "messages": messages,
            "temperature": 0,
        });
        let resp = self.endpoint.post_json(&body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| Error::Backend(format!("chat response without assistant text: {resp}")))
    }
}

#[derive(Deserialize)]
struct RawTriple {
    q_start: String,
    q_end: String,
    q_desc: String,
}

/// Parses the strict-JSON reply (tolerating a surrounding code fence or
/// prose) and validates it.
pub fn parse_triple(class_id: usize, raw: &str) -> std::result::Result<QueryTriple, String> {
    let (Some(lo), Some(hi)) = (raw.find('{'), raw.rfind('}')) else {
        return Err("no JSON object in reply".into());
    };
    if hi < lo {
        return Err("no JSON object in reply".into());
    }
    let parsed: RawTriple =
        serde_json::from_str(&raw[lo..=hi]).map_err(|e| format!("reply is not the expected JSON object: {e}"))?;
    let triple = QueryTriple {
        class_id,
        q_start: parsed.q_start.trim().to_owned(),
        q_end: parsed.q_end.trim().to_owned(),
        q_desc: parsed.q_desc.trim().to_owned(),
    };
    validate_triple(&triple).map_err(|v| v.join("; "))?;
    Ok(triple)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedTriple {
    pub class: String,
    pub model: String,
    pub template_hash: String,
    pub q_start: String,
    pub q_end: String,
    pub q_desc: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheProvenance {
    pub generator: String,
    pub model: String,
    pub template_hash: String,
}

/// On-disk query cache keyed by model, class name and template hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCache {
    pub provenance: CacheProvenance,
    pub entries: BTreeMap<String, CachedTriple>,
}

impl QueryCache {
    fn empty(cfg: &QueryGenConfig) -> Self {
        Self {
            provenance: CacheProvenance {
                generator: concat!("zeal ", env!("CARGO_PKG_VERSION")).into(),
                model: cfg.endpoint.model.clone(),
                template_hash: cfg.template_hash(),
            },
            entries: BTreeMap::new(),
        }
    }

    pub fn key(model: &str, class: &str, template_hash: &str) -> String {
        format!("{model}|{class}|{template_hash}")
    }

    pub fn load_or_empty(path: &Path, cfg: &QueryGenConfig) -> Result<Self> {
        if path.exists() {
            read_json_file(path)
        } else {
            Ok(Self::empty(cfg))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json_file(path, self)
    }
}

fn request_triple(class: &ActionClass, cfg: &QueryGenConfig, chat: &dyn ChatModel) -> Result<QueryTriple> {
    let mut messages = vec![ChatMessage::user(cfg.render(&class.name))];
    let reply = chat
        .complete(&messages)
        .map_err(|e| tag_class(e, &class.name))?;
    match parse_triple(class.class_id, &reply) {
        Ok(t) => Ok(t),
        Err(first_err) => {
            log::info!("re-prompting for {}: {first_err}", class.name);
            messages.push(ChatMessage::assistant(reply.clone()));
            messages.push(ChatMessage::user(format!(
                "Your reply could not be used ({first_err}). Reply again with only the JSON object with keys \"q_start\", \"q_end\" and \"q_desc\"."
            )));
            let second = chat
                .complete(&messages)
                .map_err(|e| tag_class(e, &class.name))?;
            parse_triple(class.class_id, &second).map_err(|e| {
                Error::Backend(format!(
                    "class {}: unusable query reply ({e}); raw response: {second}",
                    class.name
                ))
            })
        }
    }
}

fn tag_class(e: Error, class: &str) -> Error {
    match e {
        Error::Transport { url, message } => Error::Transport {
            url,
            message: format!("class {class}: {message}"),
        },
        Error::Backend(m) => Error::Backend(format!("class {class}: {m}")),
        other => other,
    }
}

/// One triple per class, in input order. Classes already in the cache are
/// not requested; new answers are written back once all requests settle.
pub fn generate_queries(
    classes: &[ActionClass],
    cfg: &QueryGenConfig,
    chat: &dyn ChatModel,
) -> Result<Vec<QueryTriple>> {
    cfg.validate()?;
    if classes.is_empty() {
        return Ok(Vec::new());
    }
    let hash = cfg.template_hash();
    let model = &cfg.endpoint.model;
    let mut cache = QueryCache::load_or_empty(&cfg.cache_path, cfg)?;

    let missing: Vec<&ActionClass> = classes
        .iter()
        .filter(|c| !cache.entries.contains_key(&QueryCache::key(model, &c.name, &hash)))
        .collect();
    let fresh = Exec::with_jobs(Some(cfg.max_in_flight.max(1)))
        .map(&missing, |c| request_triple(c, cfg, chat));

    let mut first_err = None;
    let mut added = false;
    for (class, result) in missing.iter().zip(fresh) {
        match result {
            Ok(t) => {
                cache.entries.insert(
                    QueryCache::key(model, &class.name, &hash),
                    CachedTriple {
                        class: class.name.clone(),
                        model: model.clone(),
                        template_hash: hash.clone(),
                        q_start: t.q_start,
                        q_end: t.q_end,
                        q_desc: t.q_desc,
                    },
                );
                added = true;
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if added {
        cache.provenance = QueryCache::empty(cfg).provenance;
        cache.save(&cfg.cache_path)?;
    }
    if let Some(e) = first_err {
        return Err(e);
    }

    classes
        .iter()
        .map(|c| {
            let hit = &cache.entries[&QueryCache::key(model, &c.name, &hash)];
            Ok(QueryTriple {
                class_id: c.class_id,
                q_start: hit.q_start.clone(),
                q_end: hit.q_end.clone(),
                q_desc: hit.q_desc.clone(),
            })
        })
        .collect()
}

/// Splits CamelCase and underscores into lowercase words:
/// `"CliffDiving"` → `"cliff diving"`.
pub fn humanize_class_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len() + 4);
    let chars: Vec<char> = name.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' || c == '-' {
            out.push(' ');
            continue;
        }
        if i > 0 && c.is_uppercase() {
            let prev = chars[i - 1];
            let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
            if prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_lower) {
                out.push(' ');
            }
        }
        out.extend(c.to_lowercase());
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Deterministic, model-free triple used with the synthetic backends.
pub fn synthetic_triple(class: &ActionClass) -> QueryTriple {
    let words = humanize_class_name(&class.name);
    QueryTriple {
        class_id: class.class_id,
        q_start: format!("Is the person about to begin {words}?"),
        q_end: format!("Has the person just finished {words}?"),
        q_desc: format!("A person performing {words}."),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct QueryFileEntry {
    class: String,
    q_start: String,
    q_end: String,
    q_desc: String,
}

/// Writes the triples of a run as `{"queries": [{class, q_start, q_end, q_desc}]}`.
pub fn write_queries(path: impl AsRef<Path>, triples: &[QueryTriple], labels: &crate::domain::LabelSpace) -> Result<()> {
    let entries = triples
        .iter()
        .map(|t| {
            Ok(QueryFileEntry {
                class: labels.name_of(t.class_id)?.to_owned(),
                q_start: t.q_start.clone(),
                q_end: t.q_end.clone(),
                q_desc: t.q_desc.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json_file(path.as_ref(), &json!({ "queries": entries }))
}

pub fn read_queries(path: impl AsRef<Path>, labels: &crate::domain::LabelSpace) -> Result<Vec<QueryTriple>> {
    #[derive(Deserialize)]
    struct File {
        queries: Vec<QueryFileEntry>,
    }
    let path = path.as_ref();
    let file: File = read_json_file(path)?;
    file.queries
        .into_iter()
        .enumerate()
        .map(|(i, q)| {
            let t = QueryTriple {
                class_id: labels.id_of(&q.class)?,
                q_start: q.q_start,
                q_end: q.q_end,
                q_desc: q.q_desc,
            };
            validate_triple(&t).map_err(|v| {
                Error::Validation(format!("{} query #{i}: {}", path.display(), v.join("; ")))
            })?;
            Ok(t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;

    fn cliff_diving() -> QueryTriple {
        QueryTriple {
            class_id: 0,
            q_start: "Is the person standing on the edge of a cliff above water?".into(),
            q_end: "Is the person submerged in or breaking the surface of the water?".into(),
            q_desc: "A person jumps from a cliff into water.".into(),
        }
    }

    #[test]
    fn reference_triple_is_valid() {
        assert_eq!(validate_triple(&cliff_diving()), Ok(()));
    }

    #[test]
    fn violations() {
        let t = QueryTriple {
            q_start: String::new(),
            ..cliff_diving()
        };
        assert_eq!(validate_triple(&t), Err(vec!["empty q_start".to_string()]));
        let t = QueryTriple {
            q_desc: "Does a person jump?".into(),
            ..cliff_diving()
        };
        assert_eq!(validate_triple(&t), Err(vec!["q_desc interrogative".to_string()]));
        let t = QueryTriple {
            q_end: "The person is in the water.".into(),
            ..cliff_diving()
        };
        assert_eq!(validate_triple(&t), Err(vec!["q_end not interrogative".to_string()]));
    }

    #[test]
    fn template_placeholder_count() {
        let mut cfg = QueryGenConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.prompt_template = "no placeholder".into();
        assert!(cfg.validate().is_err());
        cfg.prompt_template = "{class} and {class}".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn parse_fenced_reply() {
        let raw = "```json\n{\"q_start\": \"Is it starting?\", \"q_end\": \"Is it over?\", \"q_desc\": \"A thing.\"}\n```";
        let t = parse_triple(3, raw).unwrap();
        assert_eq!(t.class_id, 3);
        assert_eq!(t.q_end, "Is it over?");
        assert!(parse_triple(0, "sure! here you go").is_err());
        assert!(parse_triple(0, "{\"q_start\": \"x\"}").is_err());
    }

    struct Scripted {
        replies: Vec<String>,
        calls: AtomicUsize,
    }

    impl ChatModel for Scripted {
        fn complete(&self, _: &[ChatMessage]) -> Result<String> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.replies[i.min(self.replies.len() - 1)].clone())
        }
    }

    fn cfg_in(dir: &tempfile::TempDir) -> QueryGenConfig {
        QueryGenConfig {
            cache_path: dir.path().join("cache.json"),
            max_in_flight: 1,
            ..QueryGenConfig::default()
        }
    }

    #[test]
    fn empty_class_list_makes_no_calls() {
        let dir = tempfile::tempdir().unwrap();
        let chat = Scripted {
            replies: vec!["{}".into()],
            calls: AtomicUsize::new(0),
        };
        assert!(generate_queries(&[], &cfg_in(&dir), &chat).unwrap().is_empty());
        assert_eq!(chat.calls.load(Ordering::SeqCst), 0);
        assert!(!dir.path().join("cache.json").exists());
    }

    #[test]
    fn repair_retry_then_success() {
        let dir = tempfile::tempdir().unwrap();
        let chat = Scripted {
            replies: vec![
                "I think the start is when...".into(),
                r#"{"q_start":"Is it starting?","q_end":"Is it done?","q_desc":"It happens."}"#.into(),
            ],
            calls: AtomicUsize::new(0),
        };
        let class = ActionClass {
            class_id: 0,
            name: "Thing".into(),
        };
        let out = generate_queries(&[class], &cfg_in(&dir), &chat).unwrap();
        assert_eq!(out[0].q_start, "Is it starting?");
        assert_eq!(chat.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn unusable_reply_carries_raw_text() {
        let dir = tempfile::tempdir().unwrap();
        let chat = Scripted {
            replies: vec!["nonsense reply".into()],
            calls: AtomicUsize::new(0),
        };
        let class = ActionClass {
            class_id: 0,
            name: "Thing".into(),
        };
        let err = generate_queries(&[class], &cfg_in(&dir), &chat).unwrap_err().to_string();
        assert!(err.contains("Thing") && err.contains("nonsense reply"), "{err}");
    }

    #[test]
    fn template_change_invalidates_cache() {
        let dir = tempfile::tempdir().unwrap();
        let reply = r#"{"q_start":"Is it starting?","q_end":"Is it done?","q_desc":"It happens."}"#;
        let chat = Scripted {
            replies: vec![reply.into()],
            calls: AtomicUsize::new(0),
        };
        let classes = [ActionClass {
            class_id: 0,
            name: "Thing".into(),
        }];
        let mut cfg = cfg_in(&dir);
        generate_queries(&classes, &cfg, &chat).unwrap();
        generate_queries(&classes, &cfg, &chat).unwrap();
        assert_eq!(chat.calls.load(Ordering::SeqCst), 1);
        cfg.prompt_template = "Describe {class}.".into();
        generate_queries(&classes, &cfg, &chat).unwrap();
        assert_eq!(chat.calls.load(Ordering::SeqCst), 2);
        let cache = QueryCache::load_or_empty(&cfg.cache_path, &cfg).unwrap();
        assert_eq!(cache.entries.len(), 2);
    }

    #[test]
    fn humanize() {
        assert_eq!(humanize_class_name("CliffDiving"), "cliff diving");
        assert_eq!(humanize_class_name("BasketballDunk"), "basketball dunk");
        assert_eq!(humanize_class_name("HammerThrow"), "hammer throw");
        assert_eq!(humanize_class_name("long_jump"), "long jump");
        assert_eq!(humanize_class_name("JavelinThrow2"), "javelin throw2");
        assert_eq!(humanize_class_name("UFOLanding"), "ufo landing");
    }

    #[test]
    fn synthetic_triples_are_valid() {
        let t = synthetic_triple(&ActionClass {
            class_id: 4,
            name: "PoleVault".into(),
        });
        assert_eq!(validate_triple(&t), Ok(()));
        assert!(t.q_start.contains("pole vault"));
    }
}
