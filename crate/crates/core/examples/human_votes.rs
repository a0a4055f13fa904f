//! Aggregates three human votes per image into a verdict on the weak label
//! and reports how often the OpenStreetMap label was right.
//!
//! Run with `cargo run --example human_votes`.

use geosift::eval::{aggregate_votes, osm_accuracy_report, validated_subset, Vote, VoteRecord};
use geosift::manifest::FunctionClass::{self, *};

fn trio(id: &str, shown: FunctionClass, votes: [(Vote, Option<FunctionClass>); 3]) -> Vec<VoteRecord> {
    votes
        .into_iter()
        .map(|(vote, corrected_label)| VoteRecord {
            image_id: id.into(),
            shown_label: shown,
            vote,
            corrected_label,
        })
        .collect()
}

fn main() -> geosift::Result<()> {
    let yes = (Vote::Yes, None);
    let unsure = (Vote::Unsure, None);
    let no = |c| (Vote::No, Some(c));
    let votes: Vec<VoteRecord> = [
        trio("img-1", Commercial, [yes, yes, yes]),
        trio("img-2", Commercial, [no(Residential), no(Residential), no(Residential)]),
        trio("img-3", Residential, [yes, yes, yes]),
        trio("img-4", Residential, [yes, unsure, yes]),
        trio("img-5", Other, [no(Commercial), no(Residential), no(Commercial)]),
        trio("img-6", Other, [unsure, unsure, unsure]),
    ]
    .concat();

    let verdicts = aggregate_votes(&votes)?;
    for (id, v) in &verdicts {
        println!("{id}: shown {}  {:?}", v.shown_label, v.outcome);
    }
    println!();
    print!("{}", osm_accuracy_report(&verdicts));
    println!("\nvalidated subset: {:?}", validated_subset(&verdicts));
    Ok(())
}
