//! Annotation types, validation and the per-stay JSON file store.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{SecondsFormat, Utc};
use ews_core::Seconds;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::valid_stay_id;
use crate::error::{ApiError, FieldError, MonitorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTypeDef {
    #[serde(rename = "type")]
    pub name: String,
    /// JSON Schema for the metadata document.
    pub schema: Value,
    pub color: String,
}

pub fn default_annotation_types() -> Vec<AnnotationTypeDef> {
    vec![
        AnnotationTypeDef {
            name: "event_review".into(),
            schema: json!({
                "type": "object",
                "properties": {
                    "verdict": {"enum": ["confirmed", "rejected", "unsure"]},
                    "severity": {"enum": ["mild", "moderate", "severe"]},
                    "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                    "comment": {"type": "string"}
                },
                "required": ["verdict"],
                "additionalProperties": false
            }),
            color: "#d62728".into(),
        },
        AnnotationTypeDef {
            name: "artifact".into(),
            schema: json!({
                "type": "object",
                "properties": {
                    "channels": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                    "kind": {"enum": ["sensor_off", "motion", "calibration", "other"]}
                },
                "required": ["channels"],
                "additionalProperties": false
            }),
            color: "#7f7f7f".into(),
        },
        AnnotationTypeDef {
            name: "note".into(),
            schema: json!({"type": "object"}),
            color: "#1f77b4".into(),
        },
    ]
}

/// Registered types with compiled metadata validators.
pub struct TypeRegistry {
    defs: Vec<AnnotationTypeDef>,
    validators: BTreeMap<String, jsonschema::Validator>,
}

impl TypeRegistry {
    pub fn new(defs: Vec<AnnotationTypeDef>) -> Result<Self, MonitorError> {
        let mut validators = BTreeMap::new();
        for d in &defs {
            jsonschema::meta::validate(&d.schema)
                .map_err(|e| MonitorError::AnnotationTypes(format!("type {:?}: invalid schema: {e}", d.name)))?;
            let v = jsonschema::validator_for(&d.schema)
                .map_err(|e| MonitorError::AnnotationTypes(format!("type {:?}: {e}", d.name)))?;
            if validators.insert(d.name.clone(), v).is_some() {
                return Err(MonitorError::AnnotationTypes(format!("duplicate type {:?}", d.name)));
            }
        }
        Ok(TypeRegistry { defs, validators })
    }

    /// Reads a JSON array of type definitions, or the built-in set when the
    /// file does not exist.
    pub fn load(path: &Path) -> Result<Self, MonitorError> {
        if !path.exists() {
            return TypeRegistry::new(default_annotation_types());
        }
        let text = fs::read_to_string(path).map_err(|e| MonitorError::AnnotationTypes(format!("{}: {e}", path.display())))?;
        let defs = serde_json::from_str(&text).map_err(|e| MonitorError::AnnotationTypes(format!("{}: {e}", path.display())))?;
        TypeRegistry::new(defs)
    }

    pub fn defs(&self) -> &[AnnotationTypeDef] {
        &self.defs
    }

    pub fn default_color(&self, name: &str) -> Option<&str> {
        self.defs.iter().find(|d| d.name == name).map(|d| d.color.as_str())
    }

    fn metadata_errors(&self, name: &str, metadata: &Value) -> Option<Vec<FieldError>> {
        let v = self.validators.get(name)?;
        Some(
            v.iter_errors(metadata)
                .map(|e| FieldError { path: format!("/metadata{}", e.instance_path()), message: e.to_string() })
                .collect(),
        )
    }
}

/// Client-supplied annotation fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationInput {
    #[serde(rename = "type")]
    pub annotation_type: String,
    pub start_s: Seconds,
    pub end_s: Seconds,
    #[serde(default)]
    pub label: String,
    #[serde(default = "empty_object")]
    pub metadata: Value,
    #[serde(default)]
    pub color: Option<String>,
}

fn empty_object() -> Value {
    json!({})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationUpdate {
    /// Version the client last read; a mismatch is a conflict.
    pub version: u64,
    #[serde(flatten)]
    pub fields: AnnotationInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotation_id: String,
    pub stay_id: String,
    #[serde(rename = "type")]
    pub annotation_type: String,
    pub start_s: Seconds,
    pub end_s: Seconds,
    pub label: String,
    pub metadata: Value,
    pub color: Option<String>,
    pub created_at: String,
    pub updated_at: String,
    pub version: u64,
}

pub fn validate_input(input: &AnnotationInput, types: &TypeRegistry) -> Result<(), ApiError> {
    let mut fields = Vec::new();
    if input.end_s < input.start_s {
        fields.push(FieldError { path: "/end_s".into(), message: format!("end_s {} precedes start_s {}", input.end_s, input.start_s) });
    }
    if input.start_s < 0 {
        fields.push(FieldError { path: "/start_s".into(), message: "start_s must be non-negative".into() });
    }
    match types.metadata_errors(&input.annotation_type, &input.metadata) {
        None => fields.push(FieldError { path: "/type".into(), message: format!("unknown annotation type {:?}", input.annotation_type) }),
        Some(errs) => fields.extend(errs),
    }
    if fields.is_empty() {
        Ok(())
    } else {
        Err(ApiError::invalid(fields))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct ListQuery {
    #[serde(rename = "type")]
    pub annotation_type: Option<String>,
    /// Keep annotations overlapping `[from_s, to_s]`.
    pub from_s: Option<Seconds>,
    pub to_s: Option<Seconds>,
    pub sort: Option<String>,
    pub order: Option<String>,
}

pub fn apply_query(mut items: Vec<Annotation>, q: &ListQuery) -> Result<Vec<Annotation>, ApiError> {
    items.retain(|a| {
        q.annotation_type.as_ref().is_none_or(|t| &a.annotation_type == t)
            && q.from_s.is_none_or(|f| a.end_s >= f)
            && q.to_s.is_none_or(|t| a.start_s <= t)
    });
    let key = q.sort.as_deref().unwrap_or("start_s");
    match key {
        "start_s" => items.sort_by(|a, b| (a.start_s, &a.annotation_id).cmp(&(b.start_s, &b.annotation_id))),
        "end_s" => items.sort_by(|a, b| (a.end_s, &a.annotation_id).cmp(&(b.end_s, &b.annotation_id))),
        "type" => items.sort_by(|a, b| (&a.annotation_type, a.start_s, &a.annotation_id).cmp(&(&b.annotation_type, b.start_s, &b.annotation_id))),
        "label" => items.sort_by(|a, b| (&a.label, a.start_s, &a.annotation_id).cmp(&(&b.label, b.start_s, &b.annotation_id))),
        "created_at" => items.sort_by(|a, b| (&a.created_at, &a.annotation_id).cmp(&(&b.created_at, &b.annotation_id))),
        "updated_at" => items.sort_by(|a, b| (&a.updated_at, &a.annotation_id).cmp(&(&b.updated_at, &b.annotation_id))),
        other => return Err(ApiError::bad_request(format!("unknown sort key {other:?}"))),
    }
    match q.order.as_deref() {
        None | Some("asc") => {}
        Some("desc") => items.reverse(),
        Some(other) => return Err(ApiError::bad_request(format!("order must be asc or desc, got {other:?}"))),
    }
    Ok(items)
}

/// Write-through store: one `<stay_id>.json` array per stay, replaced by
/// write-then-rename. The in-memory map always equals the files.
pub struct AnnotationStore {
    dir: PathBuf,
    by_id: RwLock<BTreeMap<String, Annotation>>,
    stay_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    next_id: AtomicU64,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true)
}

fn id_number(id: &str) -> Option<u64> {
    id.strip_prefix("ann-")?.parse().ok()
}

impl AnnotationStore {
    pub fn open(dir: &Path) -> Result<Self, MonitorError> {
        let err = |m: String| MonitorError::Store(m);
        fs::create_dir_all(dir).map_err(|e| err(format!("{}: {e}", dir.display())))?;
        let mut by_id = BTreeMap::new();
        let entries = fs::read_dir(dir).map_err(|e| err(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| err(e.to_string()))?.path();
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
            let items: Vec<Annotation> = serde_json::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))?;
            for a in items {
                by_id.insert(a.annotation_id.clone(), a);
            }
        }
        let next = by_id.keys().filter_map(|k| id_number(k)).max().map_or(1, |m| m + 1);
        Ok(AnnotationStore {
            dir: dir.to_path_buf(),
            by_id: RwLock::new(by_id),
            stay_locks: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(next),
        })
    }

    fn stay_lock(&self, stay: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.stay_locks.lock().expect("lock poisoned").entry(stay.to_string()).or_default().clone()
    }

    pub fn get(&self, id: &str) -> Option<Annotation> {
        self.by_id.read().expect("lock poisoned").get(id).cloned()
    }

    pub fn all(&self) -> Vec<Annotation> {
        self.by_id.read().expect("lock poisoned").values().cloned().collect()
    }

    pub fn for_stay(&self, stay: &str) -> Vec<Annotation> {
        self.by_id.read().expect("lock poisoned").values().filter(|a| a.stay_id == stay).cloned().collect()
    }

    /// Sorted by `(stay_id, start_s, annotation_id)`.
    pub fn export(&self) -> Vec<Annotation> {
        let mut all = self.all();
        all.sort_by(|a, b| (&a.stay_id, a.start_s, &a.annotation_id).cmp(&(&b.stay_id, b.start_s, &b.annotation_id)));
        all
    }

    async fn persist(&self, stay: &str, items: Vec<Annotation>) -> Result<(), ApiError> {
        let path = self.dir.join(format!("{stay}.json"));
        tokio::task::spawn_blocking(move || write_atomic(&path, &items))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(|e| ApiError::internal(format!("persisting annotations: {e}")))
    }

    /// Stay annotations after applying `change`, sorted for the file.
    fn with_change(&self, stay: &str, change: Option<&Annotation>, remove: Option<&str>) -> Vec<Annotation> {
        let mut items: Vec<Annotation> = self
            .for_stay(stay)
            .into_iter()
            .filter(|a| Some(a.annotation_id.as_str()) != remove && change.is_none_or(|c| c.annotation_id != a.annotation_id))
            .collect();
        items.extend(change.cloned());
        items.sort_by(|a, b| (a.start_s, &a.annotation_id).cmp(&(b.start_s, &b.annotation_id)));
        items
    }

    pub async fn create(&self, stay: &str, input: AnnotationInput, types: &TypeRegistry) -> Result<Annotation, ApiError> {
        if !valid_stay_id(stay) {
            return Err(ApiError::not_found(format!("unknown stay {stay:?}")));
        }
        validate_input(&input, types)?;
        let lock = self.stay_lock(stay);
        let _guard = lock.lock().await;
        let ts = now();
        let a = Annotation {
            annotation_id: format!("ann-{:06}", self.next_id.fetch_add(1, Ordering::SeqCst)),
            stay_id: stay.to_string(),
            color: input.color.or_else(|| types.default_color(&input.annotation_type).map(str::to_string)),
            annotation_type: input.annotation_type,
            start_s: input.start_s,
            end_s: input.end_s,
            label: input.label,
            metadata: input.metadata,
            created_at: ts.clone(),
            updated_at: ts,
            version: 1,
        };
        self.persist(stay, self.with_change(stay, Some(&a), None)).await?;
        self.by_id.write().expect("lock poisoned").insert(a.annotation_id.clone(), a.clone());
        Ok(a)
    }

    pub async fn update(&self, id: &str, update: AnnotationUpdate, types: &TypeRegistry) -> Result<Annotation, ApiError> {
        let stay = self.get(id).ok_or_else(|| ApiError::not_found(format!("unknown annotation {id:?}")))?.stay_id;
        validate_input(&update.fields, types)?;
        let lock = self.stay_lock(&stay);
        let _guard = lock.lock().await;
        let current = self.get(id).ok_or_else(|| ApiError::not_found(format!("unknown annotation {id:?}")))?;
        if current.version != update.version {
            return Err(ApiError::conflict(format!("annotation {id} is at version {}, update was based on {}", current.version, update.version)));
        }
        let f = update.fields;
        let a = Annotation {
            color: f.color.or_else(|| types.default_color(&f.annotation_type).map(str::to_string)),
            annotation_type: f.annotation_type,
            start_s: f.start_s,
            end_s: f.end_s,
            label: f.label,
            metadata: f.metadata,
            updated_at: now(),
            version: current.version + 1,
            ..current
        };
        self.persist(&stay, self.with_change(&stay, Some(&a), None)).await?;
        self.by_id.write().expect("lock poisoned").insert(a.annotation_id.clone(), a.clone());
        Ok(a)
    }

    pub async fn delete(&self, id: &str, version: Option<u64>) -> Result<Annotation, ApiError> {
        let stay = self.get(id).ok_or_else(|| ApiError::not_found(format!("unknown annotation {id:?}")))?.stay_id;
        let lock = self.stay_lock(&stay);
        let _guard = lock.lock().await;
        let current = self.get(id).ok_or_else(|| ApiError::not_found(format!("unknown annotation {id:?}")))?;
        if let Some(v) = version.filter(|&v| v != current.version) {
            return Err(ApiError::conflict(format!("annotation {id} is at version {}, delete was based on {v}", current.version)));
        }
        self.persist(&stay, self.with_change(&stay, None, Some(id))).await?;
        self.by_id.write().expect("lock poisoned").remove(id);
        Ok(current)
    }
}

fn write_atomic(path: &Path, items: &[Annotation]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(serde_json::to_string_pretty(items).map_err(std::io::Error::other)?.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        // directory fsync makes the rename durable; not supported everywhere
        let _ = fs::File::open(dir).and_then(|d| d.sync_all());
    }
    Ok(())
}
