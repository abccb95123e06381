//! Flag/file merging. A config file is canonical: a flag that disagrees with
//! a value the file sets is ignored with a warning; flags fill in what the
//! file leaves out.

use serde_json::{Map, Value};

/// Flags explicitly given on the command line, keyed by dotted JSON path.
#[derive(Debug, Default)]
pub struct Flags {
    entries: Vec<(&'static str, &'static str, Value)>,
}

impl Flags {
    /// `path` is the dotted location in the config, `flag` the option name
    /// used in warnings.
    pub fn set(&mut self, path: &'static str, flag: &'static str, value: Option<Value>) {
        if let Some(v) = value {
            self.entries.push((path, flag, v));
        }
    }
}

fn slot<'a>(root: &'a mut Map<String, Value>, path: &str) -> (&'a mut Map<String, Value>, String) {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("non-empty path").to_string();
    let mut node = root;
    for p in parts {
        let entry = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if !entry.is_object() {
            *entry = Value::Object(Map::new());
        }
        node = entry.as_object_mut().expect("object");
    }
    (node, last)
}

/// Merges `flags` into `file` (an empty object when there is no file) and
/// returns the warnings for overridden flags.
pub fn merge(file: Option<Value>, flags: &Flags) -> Result<(Value, Vec<String>), String> {
    let mut root = match file {
        None => Map::new(),
        Some(Value::Object(m)) => m,
        Some(_) => return Err("config file must contain a JSON object".into()),
    };
    let mut warnings = Vec::new();
    for (path, flag, value) in &flags.entries {
        let (node, key) = slot(&mut root, path);
        match node.get(&key) {
            Some(existing) if existing != value => warnings.push(format!(
                "--{flag} {} ignored: the config file sets {key} = {existing}",
                compact(value)
            )),
            Some(_) => {}
            None => {
                node.insert(key, value.clone());
            }
        }
    }
    Ok((Value::Object(root), warnings))
}

/// Inserts `value` at `path` only if nothing is there yet.
pub fn default_at(root: &mut Value, path: &str, value: Value) {
    if let Value::Object(m) = root {
        let (node, key) = slot(m, path);
        node.entry(key).or_insert(value);
    }
}

pub fn get<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(root, |v, p| v.get(p))
}

fn compact(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
