//! Parsing, schema and regex enforcement, answer normalization and
//! canonical serialization.

mod extract;
mod json;
mod normalize;
mod schema;

pub use extract::{
    extract_final_answer, extract_json, extract_json_with, final_answer_segment,
    first_balanced_object, validate_regex, ExtractionRule, ParseOutcome, ParseStatus, Strictness,
    EXTRACTION_RULE_VERSION,
};
pub use json::{canonical_serialize, JsonMap, JsonParseError, JsonValue};
pub use normalize::{normalize, normalize_answer};
pub use schema::{validate_schema, JsonType, SchemaDoc, SchemaError, Violation, SUPPORTED_KEYWORDS};
