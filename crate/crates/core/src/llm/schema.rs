use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Response schemas, one per family of call sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "lowercase")]
pub enum Schema {
    /// `{"severities": [9 × 0..=3], "weights"?: [3 × finite ≥ 0]}`
    Plan,
    /// `{"text": string}`
    Text,
    /// `{"summary": string, "keywords": [string], "pseudo_label": [classes × ≥ 0]}`
    Augment { classes: usize },
    /// `{"q": 0..=10, "delta": bool}`
    Score,
}

impl Schema {
    pub fn id(&self) -> String {
        match self {
            Schema::Plan => "plan/1".into(),
            Schema::Text => "text/1".into(),
            Schema::Augment { classes } => format!("augment/1:{classes}"),
            Schema::Score => "score/1".into(),
        }
    }

    pub fn validate(&self, v: &Value) -> Result<()> {
        let bad = |msg: &str| Err(Error::Provider(format!("{} schema violation: {msg}", self.id())));
        let obj = match v.as_object() {
            Some(o) => o,
            None => return bad("not an object"),
        };
        match self {
            Schema::Plan => {
                let Some(s) = obj.get("severities").and_then(Value::as_array) else {
                    return bad("missing severities");
                };
                if s.len() != 9 || !s.iter().all(|x| x.as_u64().is_some_and(|l| l <= 3)) {
                    return bad("severities must be nine integers in 0..=3");
                }
                if let Some(w) = obj.get("weights") {
                    let ok = w.as_array().is_some_and(|w| {
                        w.len() == 3 && w.iter().all(|x| x.as_f64().is_some_and(|f| f.is_finite() && f >= 0.0))
                    });
                    if !ok {
                        return bad("weights must be three non-negative numbers");
                    }
                }
            }
            Schema::Text => {
                if !obj.get("text").is_some_and(Value::is_string) {
                    return bad("missing text");
                }
            }
            Schema::Augment { classes } => {
                if !obj.get("summary").is_some_and(Value::is_string) {
                    return bad("missing summary");
                }
                let kw = obj.get("keywords").and_then(Value::as_array);
                if !kw.is_some_and(|k| k.iter().all(Value::is_string)) {
                    return bad("keywords must be strings");
                }
                let p = obj.get("pseudo_label").and_then(Value::as_array);
                let ok = p.is_some_and(|p| {
                    p.len() == *classes
                        && p.iter().all(|x| x.as_f64().is_some_and(|f| f.is_finite() && f >= 0.0))
                        && p.iter().filter_map(Value::as_f64).sum::<f64>() > 0.0
                });
                if !ok {
                    return bad("pseudo_label must be a non-negative distribution");
                }
            }
            Schema::Score => {
                if !obj.get("q").and_then(Value::as_f64).is_some_and(|q| (0.0..=10.0).contains(&q)) {
                    return bad("q must lie in [0,10]");
                }
                if !obj.get("delta").is_some_and(Value::is_boolean) {
                    return bad("delta must be a boolean");
                }
            }
        }
        Ok(())
    }
}

/// Extract the JSON object from a model reply (tolerating code fences) and
/// validate it.
pub(crate) fn parse(text: &str, schema: &Schema) -> Result<Value> {
    let trimmed = text.trim();
    let body = match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(a), Some(b)) if b > a => &trimmed[a..=b],
        _ => return Err(Error::Provider(format!("{} schema violation: no JSON object", schema.id()))),
    };
    let value: Value = serde_json::from_str(body).map_err(|e| Error::Provider(format!("unparseable reply: {e}")))?;
    schema.validate(&value)?;
    Ok(value)
}
