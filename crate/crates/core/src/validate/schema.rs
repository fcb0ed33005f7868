//! Validator for the JSON Schema keyword subset the harness ships:
//! `type`, `required`, `properties`, `additionalProperties` (boolean),
//! `pattern`, `const`, `enum`, `minimum` and `items`.
//!
//! Keywords are evaluated independently, as in standard JSON Schema: a
//! keyword that does not apply to the instance type is ignored.

use std::fmt;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::json::{canonical_serialize, JsonValue};

pub const SUPPORTED_KEYWORDS: &[&str] = &[
    "type",
    "required",
    "properties",
    "additionalProperties",
    "pattern",
    "const",
    "enum",
    "minimum",
    "items",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("schema keyword {keyword:?} at {path:?} is outside the supported subset")]
    UnsupportedKeyword { path: String, keyword: String },
    #[error("schema keyword {keyword:?} at {path:?} is malformed: {message}")]
    Malformed {
        path: String,
        keyword: String,
        message: String,
    },
    #[error("schema at {0:?} must be an object")]
    NotAnObject(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsonType {
    Null,
    Boolean,
    Integer,
    Number,
    String,
    Array,
    Object,
}

impl JsonType {
    fn parse(name: &str) -> Option<JsonType> {
        Some(match name {
            "null" => JsonType::Null,
            "boolean" => JsonType::Boolean,
            "integer" => JsonType::Integer,
            "number" => JsonType::Number,
            "string" => JsonType::String,
            "array" => JsonType::Array,
            "object" => JsonType::Object,
            _ => return None,
        })
    }

    fn accepts(self, value: &JsonValue) -> bool {
        match (self, value) {
            (JsonType::Null, JsonValue::Null) => true,
            (JsonType::Boolean, JsonValue::Bool(_)) => true,
            (JsonType::Integer, JsonValue::Int(_)) => true,
            (JsonType::Integer, JsonValue::Real(r)) => r.fract() == 0.0,
            (JsonType::Number, JsonValue::Int(_) | JsonValue::Real(_)) => true,
            (JsonType::String, JsonValue::String(_)) => true,
            (JsonType::Array, JsonValue::Array(_)) => true,
            (JsonType::Object, JsonValue::Object(_)) => true,
            _ => false,
        }
    }

    fn name(self) -> &'static str {
        match self {
            JsonType::Null => "null",
            JsonType::Boolean => "boolean",
            JsonType::Integer => "integer",
            JsonType::Number => "number",
            JsonType::String => "string",
            JsonType::Array => "array",
            JsonType::Object => "object",
        }
    }
}

/// One failed keyword check. `path` is a JSON pointer into the instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub keyword: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() { "/" } else { &self.path };
        write!(f, "{path}: {} ({})", self.message, self.keyword)
    }
}

#[derive(Debug, Clone)]
struct SchemaNode {
    ty: Option<JsonType>,
    required: Vec<String>,
    properties: IndexMap<String, SchemaNode>,
    additional_properties: bool,
    pattern: Option<Regex>,
    constant: Option<JsonValue>,
    enumeration: Option<Vec<JsonValue>>,
    minimum: Option<f64>,
    items: Option<Box<SchemaNode>>,
}

/// A schema document restricted to the supported subset, with its patterns
/// compiled.
#[derive(Debug, Clone)]
pub struct SchemaDoc {
    document: JsonValue,
    root: SchemaNode,
}

impl PartialEq for SchemaDoc {
    fn eq(&self, other: &Self) -> bool {
        self.document == other.document
    }
}

impl SchemaDoc {
    pub fn new(document: JsonValue) -> Result<SchemaDoc, SchemaError> {
        let root = compile(&document, "")?;
        Ok(SchemaDoc { document, root })
    }

    pub fn parse(text: &str) -> Result<SchemaDoc, SchemaError> {
        let document = JsonValue::parse(text).map_err(|e| SchemaError::Malformed {
            path: String::new(),
            keyword: "$document".into(),
            message: e.to_string(),
        })?;
        SchemaDoc::new(document)
    }

    /// The document as authored (property order preserved).
    pub fn document(&self) -> &JsonValue {
        &self.document
    }

    pub fn canonical(&self) -> String {
        canonical_serialize(&self.document)
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn validate(&self, value: &JsonValue) -> Vec<Violation> {
        let mut out = Vec::new();
        check(&self.root, value, "", &mut out);
        out
    }
}

impl Serialize for SchemaDoc {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.document.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SchemaDoc {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let document = JsonValue::deserialize(deserializer)?;
        SchemaDoc::new(document).map_err(serde::de::Error::custom)
    }
}

/// Validates `value` against `schema`; an empty list means valid.
pub fn validate_schema(value: &JsonValue, schema: &SchemaDoc) -> Vec<Violation> {
    schema.validate(value)
}

pub(crate) fn pointer_push(path: &str, token: &str) -> String {
    format!("{path}/{}", token.replace('~', "~0").replace('/', "~1"))
}

fn compile(doc: &JsonValue, path: &str) -> Result<SchemaNode, SchemaError> {
    let members = doc
        .as_object()
        .ok_or_else(|| SchemaError::NotAnObject(path.to_string()))?;
    let malformed = |keyword: &str, message: &str| SchemaError::Malformed {
        path: path.to_string(),
        keyword: keyword.to_string(),
        message: message.to_string(),
    };

    let mut node = SchemaNode {
        ty: None,
        required: Vec::new(),
        properties: IndexMap::new(),
        additional_properties: true,
        pattern: None,
        constant: None,
        enumeration: None,
        minimum: None,
        items: None,
    };

    for (keyword, arg) in members {
        match keyword.as_str() {
            "type" => {
                let name = arg.as_str().ok_or_else(|| malformed("type", "expected a type name"))?;
                node.ty = Some(
                    JsonType::parse(name).ok_or_else(|| malformed("type", "unknown type name"))?,
                );
            }
            "required" => {
                let list = arg
                    .as_array()
                    .ok_or_else(|| malformed("required", "expected an array of strings"))?;
                for item in list {
                    let key = item
                        .as_str()
                        .ok_or_else(|| malformed("required", "expected an array of strings"))?;
                    if node.required.iter().any(|k| k == key) {
                        return Err(malformed("required", "duplicate entry"));
                    }
                    node.required.push(key.to_string());
                }
            }
            "properties" => {
                let props = arg
                    .as_object()
                    .ok_or_else(|| malformed("properties", "expected an object"))?;
                for (name, sub) in props {
                    let sub_path = pointer_push(&pointer_push(path, "properties"), name);
                    node.properties.insert(name.clone(), compile(sub, &sub_path)?);
                }
            }
            "additionalProperties" => match arg {
                JsonValue::Bool(b) => node.additional_properties = *b,
                _ => return Err(malformed("additionalProperties", "only boolean form is supported")),
            },
            "pattern" => {
                let text = arg.as_str().ok_or_else(|| malformed("pattern", "expected a string"))?;
                let re = Regex::new(text).map_err(|e| malformed("pattern", &e.to_string()))?;
                node.pattern = Some(re);
            }
            "const" => node.constant = Some(arg.clone()),
            "enum" => {
                let list = arg.as_array().ok_or_else(|| malformed("enum", "expected an array"))?;
                if list.is_empty() {
                    return Err(malformed("enum", "must not be empty"));
                }
                node.enumeration = Some(list.to_vec());
            }
            "minimum" => {
                node.minimum = Some(arg.as_f64().ok_or_else(|| malformed("minimum", "expected a number"))?);
            }
            "items" => {
                let sub_path = pointer_push(path, "items");
                node.items = Some(Box::new(compile(arg, &sub_path)?));
            }
            other => {
                return Err(SchemaError::UnsupportedKeyword {
                    path: path.to_string(),
                    keyword: other.to_string(),
                })
            }
        }
    }
    Ok(node)
}

fn check(node: &SchemaNode, value: &JsonValue, path: &str, out: &mut Vec<Violation>) {
    let mut fail = |keyword: &str, message: String| {
        out.push(Violation {
            path: path.to_string(),
            keyword: keyword.to_string(),
            message,
        })
    };

    if let Some(ty) = node.ty {
        if !ty.accepts(value) {
            fail("type", format!("expected {}, found {}", ty.name(), value.type_name()));
        }
    }
    if let Some(constant) = &node.constant {
        if value != constant {
            fail("const", format!("expected constant {constant}"));
        }
    }
    if let Some(options) = &node.enumeration {
        if !options.contains(value) {
            fail("enum", "value is not one of the allowed options".to_string());
        }
    }
    if let (Some(min), Some(x)) = (node.minimum, value.as_f64()) {
        if x < min {
            fail("minimum", format!("{x} is less than the minimum {min}"));
        }
    }
    if let (Some(re), JsonValue::String(s)) = (&node.pattern, value) {
        if !re.is_match(s) {
            fail("pattern", format!("{s:?} does not match {:?}", re.as_str()));
        }
    }

    match value {
        JsonValue::Object(members) => {
            for key in &node.required {
                if !members.contains_key(key) {
                    fail("required", format!("missing required property {key:?}"));
                }
            }
            if !node.additional_properties {
                for key in members.keys() {
                    if !node.properties.contains_key(key) {
                        fail("additionalProperties", format!("unexpected property {key:?}"));
                    }
                }
            }
            for (key, sub) in &node.properties {
                if let Some(child) = members.get(key) {
                    check(sub, child, &pointer_push(path, key), out);
                }
            }
        }
        JsonValue::Array(items) => {
            if let Some(item_schema) = &node.items {
                for (i, item) in items.iter().enumerate() {
                    check(item_schema, item, &pointer_push(path, &i.to_string()), out);
                }
            }
        }
        _ => {}
    }
}
