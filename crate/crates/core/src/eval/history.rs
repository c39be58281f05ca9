use crate::corpus::Turn;

/// Render turns as `[SYS] text [USR] text ...`. When the render has more than
/// `max_tokens` whitespace tokens, the oldest tokens are cut so the most
/// recent `max_tokens` remain.
pub fn format_dialogue_history(turns: &[Turn], max_tokens: usize) -> String {
    let rendered = turns
        .iter()
        .map(|t| format!("{} {}", t.speaker.marker(), t.text))
        .collect::<Vec<_>>()
        .join(" ");
    let tokens: Vec<&str> = rendered.split_whitespace().collect();
    if tokens.len() <= max_tokens {
        rendered
    } else {
        tokens[tokens.len() - max_tokens..].join(" ")
    }
}
