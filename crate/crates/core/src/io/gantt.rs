use std::fmt::Write;

use crate::edf::{Role, ScheduleTrace};
use crate::ratio::format_ratio;
use crate::sasa::Assignment;
use crate::taskmodel::Segment;

const TICK: u64 = 10;
const LANE: u64 = 30;
const GAP: u64 = 10;
const LABEL: u64 = 90;

/// SVG chart with one lane per processor and one rectangle per execution
/// run. Rectangles carry the class `primary`, `part1`, `part2` or `backup`.
pub fn render_gantt(trace: &ScheduleTrace, assignment: &Assignment) -> String {
    let width = LABEL + trace.horizon * TICK + GAP;
    let height = trace.processors as u64 * (LANE + GAP) + GAP;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    svg.push_str(
        "<style>.lane{fill:#f2f2f2}.primary{fill:#4c78a8}.part1{fill:#54a24b}.part2{fill:#f58518}\
         .backup{fill:#e45756}text{font:11px monospace}</style>\n",
    );
    let runs = trace.runs();
    for p in 0..trace.processors {
        let y = GAP + p as u64 * (LANE + GAP);
        let util = if p < assignment.processor_count {
            format!(" U={}", format_ratio(&assignment.utilization(p)))
        } else {
            String::new()
        };
        let _ = writeln!(svg, r#"<g id="P{p}">"#);
        let _ = writeln!(
            svg,
            r#"<rect class="lane" x="{LABEL}" y="{y}" width="{}" height="{LANE}"/>"#,
            trace.horizon * TICK
        );
        let _ = writeln!(svg, r#"<text x="4" y="{}">P{p}{util}</text>"#, y + LANE / 2 + 4);
        for run in runs.iter().filter(|r| r.processor == p) {
            let class = match (run.role, run.job.segment) {
                (Role::Backup, _) => "backup",
                (_, Segment::Whole) => "primary",
                (_, Segment::Part1) => "part1",
                (_, Segment::Part2) => "part2",
            };
            let _ = writeln!(
                svg,
                r#"<rect class="{class}" x="{}" y="{}" width="{}" height="{}"><title>{} [{},{})</title></rect>"#,
                LABEL + run.interval.start * TICK,
                y + 2,
                run.interval.len() * TICK,
                LANE - 4,
                run.job,
                run.interval.start,
                run.interval.end
            );
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}
