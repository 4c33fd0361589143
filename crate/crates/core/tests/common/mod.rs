#![allow(dead_code)]

use std::fmt::Write;

use gcm::dataset::{parse_interaction_log, InteractionLog, Schema};

/// One record per tuple `(user, item, ctx0, ctx1)`; context value 0 means a
/// blank cell.
pub fn log_from_tuples(edges: &[(u8, u8, u8, u8)]) -> InteractionLog {
    let mut tsv = String::from("user\titem\tts\tage\tcat\tc0\tc1\n");
    for (n, &(u, i, a, b)) in edges.iter().enumerate() {
        let cell = |v: u8| if v == 0 { String::new() } else { format!("v{v}") };
        writeln!(
            tsv,
            "u{u}\ti{i}\t{n}\ta{}\tk{}\t{}\t{}",
            u % 3,
            i % 2,
            cell(a),
            cell(b)
        )
        .unwrap();
    }
    let schema = Schema::new(["age"], ["cat"], ["c0", "c1"]);
    parse_interaction_log(tsv.as_bytes(), &schema).unwrap()
}
