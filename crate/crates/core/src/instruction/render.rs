use super::{invert_record, Action, EditCommand, Granularity, InstructionDoc, Magnitude, RenderError, Vocabulary, VIEW};
use crate::centerline::Anchor;
use crate::corruption::{EditRecord, ErrorKind};
use crate::geometry::Vec3;

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

fn point(p: Vec3) -> String {
    format!("({}, {}, {})", p[0], p[1], p[2])
}

fn anchor_phrase(a: Anchor) -> String {
    format!("measured from the {} end", a.as_str())
}

fn magnitude_phrase(m: Magnitude) -> String {
    match m {
        Magnitude::Factor(f) => format!("by a factor of {f}"),
        Magnitude::Percent(p) => format!("by {p}%"),
        Magnitude::Voxels(v) => format!("by {v} voxels"),
        Magnitude::Millimeters(mm) => format!("by {mm} mm"),
        Magnitude::RadiusMm(r) => format!("to radius {r} mm"),
    }
}

/// Renders a command as one sentence. Concise text names only the action
/// and segment; detailed text carries every parameter.
pub fn render_command(cmd: &EditCommand, g: Granularity, vocab: &Vocabulary) -> Result<String, RenderError> {
    let seg = vocab.name(cmd.segment_id).ok_or(RenderError::UnknownSegment(cmd.segment_id))?;
    let object = match cmd.action {
        Action::Bridge => format!("the gap in the {seg}"),
        _ => format!("the {seg}"),
    };
    if g == Granularity::Concise {
        return Ok(format!("{} {object}.", capitalize(cmd.action.verb())));
    }
    let mut tail = Vec::new();
    let prefix_form = cmd.span.is_some() && matches!(cmd.action, Action::Thicken | Action::Thin | Action::Remove);
    if let Some(s) = cmd.span {
        let loc = match cmd.action {
            Action::Bridge | Action::Consolidate => format!("between {}% and {}%", s.lo, s.hi),
            _ => format!("from {}% to {}%", s.lo, s.hi),
        };
        tail.push(format!("{loc} {}", anchor_phrase(s.anchor)));
    }
    if let Some(m) = cmd.magnitude {
        tail.push(magnitude_phrase(m));
    }
    if let Some([a, b]) = cmd.hints.attach {
        let name = |c: u8| vocab.name(c).ok_or(RenderError::UnknownSegment(c));
        tail.push(format!("connecting the {} and the {}", name(a)?, name(b)?));
    }
    if !cmd.hints.points.is_empty() {
        let pts: Vec<String> = cmd.hints.points.iter().map(|&p| point(p)).collect();
        tail.push(format!("through {}", pts.join(", ")));
    }
    let tail = if tail.is_empty() { String::new() } else { format!(" {}", tail.join(" ")) };
    Ok(if prefix_form {
        format!("In the {seg}, {} the region{tail}.", cmd.action.verb())
    } else {
        format!("{} {object}{tail}.", capitalize(cmd.action.verb()))
    })
}

/// Templated description of the error itself, as seen from the canonical
/// posterior view.
pub fn render_narrative(r: &EditRecord, vocab: &Vocabulary) -> Result<String, RenderError> {
    let seg = vocab.name(r.segment_id).ok_or(RenderError::UnknownSegment(r.segment_id))?;
    let anchor = r.anchor_or_default().as_str();
    let [lo, hi] = r.span.unwrap_or([0.0, 100.0]);
    let f = r.magnitude.unwrap_or(1.0);
    let body = match r.kind {
        ErrorKind::GlobalThicken => format!("the {seg} is too thick along its whole length, about {f} times its true caliber"),
        ErrorKind::GlobalThin => format!("the {seg} is too thin along its whole length, about {f} times narrower than it should be"),
        ErrorKind::LocalThicken => format!(
            "the {seg} bulges between {lo}% and {hi}% of its length from the {anchor} end, about {f} times too wide there"
        ),
        ErrorKind::LocalThin => format!(
            "the {seg} narrows between {lo}% and {hi}% of its length from the {anchor} end, about {f} times too thin there"
        ),
        ErrorKind::MissingSegment => format!("the {seg} is missing entirely"),
        ErrorKind::Shorten => format!("the {seg} stops short: the last {hi}% toward its {anchor} end is missing"),
        ErrorKind::Disconnect => format!(
            "the {seg} is interrupted by a gap between {lo}% and {hi}% of its length from the {anchor} end"
        ),
        ErrorKind::Fragment => format!(
            "the {seg} breaks into {} pieces between {lo}% and {hi}% of its length from the {anchor} end",
            r.fragment_count.unwrap_or(2)
        ),
    };
    Ok(format!("Viewed from the {VIEW}, {body}."))
}

/// Narrative plus concise and detailed corrective instructions for `r`.
pub fn render_instruction(r: &EditRecord, vocab: &Vocabulary) -> Result<InstructionDoc, RenderError> {
    let cmd = invert_record(r);
    Ok(InstructionDoc {
        narrative: render_narrative(r, vocab)?,
        concise: render_command(&cmd, Granularity::Concise, vocab)?,
        detailed: render_command(&cmd, Granularity::Detailed, vocab)?,
        record: r.clone(),
        view: VIEW.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates() {
        let v = Vocabulary::default();
        let mut r = EditRecord::new(ErrorKind::LocalThin, 7, 0);
        r.span = Some([40.0, 60.0]);
        r.anchor = Some(Anchor::Proximal);
        r.magnitude = Some(1.5);
        let doc = render_instruction(&r, &v).unwrap();
        assert_eq!(
            doc.detailed,
            "In the L-MCA, thicken the region from 40% to 60% measured from the proximal end by a factor of 1.5."
        );
        assert_eq!(doc.concise, "Thicken the L-MCA.");
        let doc = render_instruction(&EditRecord::new(ErrorKind::MissingSegment, 10, 0), &v).unwrap();
        assert_eq!(doc.concise, "Restore the Acom.");
        assert_eq!(doc.view, "posterior");
        let mut r = EditRecord::new(ErrorKind::GlobalThicken, 1, 0);
        r.magnitude = Some(1.3);
        assert_eq!(render_instruction(&r, &v).unwrap().detailed, "Thin the BA by a factor of 1.3.");
    }
}
