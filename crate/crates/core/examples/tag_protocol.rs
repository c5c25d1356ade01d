//! Wrap hallucinated spans in markers, validate a candidate translation and
//! recover the spans from it.
//!
//! ```bash
//! cargo run --example tag_protocol
//! ```

use haldetect::corpus::AnnotatedSpan;
use haldetect::tagproto::{extract_spans, inject_tags, validate_tags, CORE_TRANSLATION_PROMPT};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let answer = "The bridge opened in 1932 and carries six lanes.";
    let spans = [AnnotatedSpan::new(21, 25, "Evident Baseless Info"), AnnotatedSpan::new(38, 47, "Subtle Conflict")];
    let tagged = inject_tags(answer, &spans)?;
    println!("tagged:    {}", tagged.as_str());

    println!("\ninstruction ({} v{}):\n{}\n", CORE_TRANSLATION_PROMPT.name, CORE_TRANSLATION_PROMPT.version, CORE_TRANSLATION_PROMPT.render("English", "German"));

    let good = "Die Brücke wurde <HAL>1932</HAL> eröffnet und hat <HAL>sechs Spuren</HAL>.";
    let dropped = "Die Brücke wurde 1932 eröffnet und hat <HAL>sechs Spuren</HAL>.";
    let nested = "Die Brücke wurde <HAL>1932 <HAL>eröffnet</HAL></HAL>.";
    for candidate in [good, dropped, nested] {
        println!("valid={:<5} {candidate}", validate_tags(candidate, tagged.pair_count()));
    }

    let (clean, recovered) = extract_spans(good)?;
    println!("\nclean: {clean}");
    for span in recovered {
        println!("  [{}, {}) {:?}", span.start, span.end, haldetect::corpus::char_slice(&clean, span.start, span.end));
    }

    match extract_spans(nested) {
        Ok(_) => unreachable!(),
        Err(e) => println!("\nnested markers rejected: {e}"),
    }
    Ok(())
}
