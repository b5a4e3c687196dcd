/// Tokens that end in a period without ending a sentence.
const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "approx", "inc",
    "ltd", "co", "corp", "no", "vol", "fig", "jan", "feb", "mar", "apr", "jun", "jul", "aug",
    "sep", "sept", "oct", "nov", "dec", "u.s", "u.k", "a.m", "p.m",
];

/// Splits review text into whitespace-normalised sentences.
///
/// A boundary is one or more of `.`, `!`, `?` (optionally followed by closing
/// quotes or brackets) and then whitespace, unless the word before a period
/// is a known abbreviation or a single letter. Line breaks always end a sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    for paragraph in text.split(['\n', '\r']) {
        let words: Vec<&str> = paragraph.split_whitespace().collect();
        let mut current: Vec<&str> = Vec::new();
        for word in words {
            current.push(word);
            if ends_sentence(word) {
                sentences.push(current.join(" "));
                current.clear();
            }
        }
        if !current.is_empty() {
            sentences.push(current.join(" "));
        }
    }
    sentences
}

fn ends_sentence(word: &str) -> bool {
    let trimmed = word.trim_end_matches(['"', '\'', ')', ']', '\u{201d}', '\u{2019}']);
    let Some(last) = trimmed.chars().last() else {
        return false;
    };
    match last {
        '!' | '?' => true,
        '.' => {
            let stem = trimmed.trim_end_matches('.');
            if trimmed.ends_with("..") {
                // ellipsis
                return true;
            }
            let stem_lower = stem
                .trim_start_matches(['"', '\'', '(', '['])
                .to_lowercase();
            let letters = stem_lower.chars().filter(|c| c.is_alphabetic()).count();
            !(ABBREVIATIONS.contains(&stem_lower.as_str()) || (letters == 1 && stem_lower.len() == 1))
        }
        _ => false,
    }
}
