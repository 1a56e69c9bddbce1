use priaas::Error;
use serde::Serialize;
use serde_json::json;

/// JSON goes to stdout as one document; human text is built lazily.
pub fn emit<T: Serialize + ?Sized>(json: bool, value: &T, human: impl FnOnce() -> String) {
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(value).expect("output serializes")
        );
    } else {
        let text = human();
        if !text.is_empty() {
            println!("{}", text.trim_end());
        }
    }
}

pub fn error(json: bool, e: &Error) {
    if json {
        println!(
            "{}",
            json!({ "error_code": e.code(), "message": e.to_string() })
        );
    } else {
        eprintln!("error [{}]: {e}", e.code());
    }
}
