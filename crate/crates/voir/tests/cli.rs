use std::fs;
use std::path::Path;

use clap::Parser;
use voir::cli::{run, Cli};
use voir::journal::{Journal, JournalEntry};
use voir_core::feedback::{Polarity, RecordedJudgment};
use voir_core::{Mode, Origin};

fn voir(args: &[&str], stdin: &str) -> anyhow::Result<String> {
    let cli = Cli::try_parse_from(std::iter::once("voir").chain(args.iter().copied()))?;
    let mut out = Vec::new();
    run(cli, &mut stdin.as_bytes(), &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_text_inputs(dir: &Path) {
    let mut features = String::from("# two blobs on one axis\n");
    for i in 0..6 {
        let x = if i < 3 { 0.1 + 0.01 * i as f64 } else { 0.9 - 0.01 * i as f64 };
        features += &format!("img{i}\timg{i}-a\t0,0,10,10\tcolor={x},0.5\tshape=0.3\n");
        features += &format!("img{i}\timg{i}-b\t0,10,10,20\tcolor={},0.5\tshape=0.7\n", 1.0 - x);
    }
    fs::write(dir.join("features.tsv"), features).unwrap();
    fs::write(dir.join("thesaurus.tsv"), "nature\t\nsky\tnature\nsea\tnature\n").unwrap();
    let ann: String = (0..6).map(|i| format!("img{i}\t{}\n", if i < 3 { "sky,sea" } else { "sea" })).collect();
    fs::write(dir.join("annotations.tsv"), ann).unwrap();
    fs::write(dir.join("assoc.tsv"), "sky\timg0-a\n").unwrap();
}

#[test]
fn build_cluster_learn_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_text_inputs(d);
    let idx = d.join("index.voir");
    let out = voir(
        &[
            "index", "build", "--features", p(&d.join("features.tsv")), "--thesaurus", p(&d.join("thesaurus.tsv")),
            "--annotations", p(&d.join("annotations.tsv")), "--associations", p(&d.join("assoc.tsv")), "--out", p(&idx),
        ],
        "",
    )
    .unwrap();
    assert!(out.contains("6 images, 12 regions, 3 terms"), "{out}");
    let c = voir::load_index(&idx).unwrap();
    assert!(c.is_normalized());
    assert_eq!(c.association_count(), 1);
    assert!(c.image_by_key("img0").map(|i| c.image(i).unwrap().has_keyword("sky")).unwrap());

    let out = voir(&["index", "cluster", "--index", p(&idx), "--k", "2", "--seed", "3"], "").unwrap();
    assert!(out.contains("2 visual categories"), "{out}");
    let c = voir::load_index(&idx).unwrap();
    let sky = c.thesaurus().find("sky").unwrap();
    // the manual anchor spreads to the 5 other members of its category
    assert_eq!(c.associations().filter(|a| a.term_id == sky && a.origin == Origin::Learned && a.d_conf == 67).count(), 5);

    let sea = c.thesaurus().find("sea").unwrap();
    let target = c.region_by_key("img0-b").unwrap();
    let journal = d.join("journal.jsonl");
    {
        let mut j = Journal::open(&journal).unwrap();
        j.append(&JournalEntry::Judgments {
            session_id: 1,
            mode: Mode::Voir3,
            iteration: 1,
            judgments: vec![RecordedJudgment { term_id: sea, region_id: target, polarity: Polarity::Relevant }],
        })
        .unwrap();
        j.append(&JournalEntry::ManualAssociation { term_id: sea, region_id: c.region_by_key("img5-b").unwrap() }).unwrap();
    }
    let updated = d.join("updated.voir");
    let out = voir(&["learn", "update", "--index", p(&idx), "--journal", p(&journal), "--out", p(&updated)], "").unwrap();
    assert!(out.contains("replayed 1 judgments"), "{out}");
    let c2 = voir::load_index(&updated).unwrap();
    assert!(c2.association_count() > c.association_count());
    assert_eq!(c2.association(sea, c.region_by_key("img5-b").unwrap()).unwrap().origin, Origin::Manual);
}

#[test]
fn build_from_images() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("images");
    fs::create_dir(&imgs).unwrap();
    let red = image::RgbImage::from_pixel(8, 8, image::Rgb([250, 10, 10]));
    red.save(imgs.join("red.png")).unwrap();
    let mut split = image::RgbImage::from_pixel(8, 4, image::Rgb([10, 10, 250]));
    for x in 4..8 {
        for y in 0..4 {
            split.put_pixel(x, y, image::Rgb([10, 250, 10]));
        }
    }
    split.save(imgs.join("split.ppm")).unwrap();
    fs::write(imgs.join("notes.txt"), "ignored").unwrap();
    fs::write(imgs.join("regions.tsv"), "split\tsplit-blue\t0,0,4,4\nsplit\tsplit-green\t4,0,8,4\n").unwrap();
    let idx = dir.path().join("i.voir");
    voir(&["index", "build", "--images", p(&imgs), "--out", p(&idx)], "").unwrap();
    let c = voir::load_index(&idx).unwrap();
    assert_eq!((c.image_count(), c.region_count()), (2, 3));
    assert!(c.region_by_key("red#0").is_some());
    assert_eq!(c.schema().dim(), 32);
    let blue = c.region(c.region_by_key("split-blue").unwrap()).unwrap();
    let green = c.region(c.region_by_key("split-green").unwrap()).unwrap();
    assert_ne!(blue.features, green.features);

    fs::write(imgs.join("regions.tsv"), "split\tbad\t0,0,9,4\n").unwrap();
    assert!(voir(&["index", "build", "--images", p(&imgs), "--out", p(&idx)], "").is_err());
}

#[test]
fn build_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_text_inputs(d);
    let idx = d.join("x.voir");
    fs::write(d.join("ann2.tsv"), "ghost\tsky\n").unwrap();
    assert!(voir(&["index", "build", "--features", p(&d.join("features.tsv")), "--annotations", p(&d.join("ann2.tsv")), "--out", p(&idx)], "").is_err());
    assert!(voir(&["index", "build", "--out", p(&idx)], "").is_err());
    fs::write(d.join("cyc.tsv"), "a\tb\nb\ta\n").unwrap();
    assert!(voir(&["index", "build", "--features", p(&d.join("features.tsv")), "--thesaurus", p(&d.join("cyc.tsv")), "--out", p(&idx)], "").is_err());
    assert!(!idx.exists());
}

#[test]
fn stats_from_stdin() {
    let pairs = "1 0\n".repeat(8) + "0 1\n" + "1 1\n";
    let out = voir(&["stats", "sign"], &pairs).unwrap();
    assert!(out.starts_with("plus=8 minus=1 p=0.0196"), "{out}");
    let out = voir(&["stats", "wilcoxon"], "1 0\n2 0\n3 0\n4 0\n5 0\n").unwrap();
    assert!(out.contains("p=0.0313") && out.contains("value=3.125e-2"), "{out}");
    let out = voir(&["stats", "sign", "--alternative", "less"], "0 1\n").unwrap();
    assert!(out.contains("p=0.500"), "{out}");
    assert!(voir(&["stats", "wilcoxon"], "1 1\n").is_err());
    assert!(voir(&["stats", "sign"], "1 2 3\n").is_err());
    assert_eq!(voir(&["stats", "sign"], "1 1\n").unwrap().trim(), "plus=0 minus=0 p=no evidence");
}

#[test]
fn eval_compare_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let out = voir(&["eval", "compare", "--seeds", "10", "--k", "10", "--iterations", "2", "--out", p(&csv)], "").unwrap();
    assert!(out.contains("VOIR-3 vs VOIR-1"), "{out}");
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "pair,plus,minus,sign_p,wilcoxon_p");
    assert_eq!(lines.len(), 4);
    assert!(voir(&["eval", "compare", "--seeds", "9"], "").is_err());
}

#[test]
fn cli_argument_errors() {
    assert!(Cli::try_parse_from(["voir", "index", "cluster", "--index", "x", "--k", "0"]).is_err());
    assert!(Cli::try_parse_from(["voir", "index", "cluster", "--index", "x", "--k", "auto"]).is_ok());
    assert!(Cli::try_parse_from(["voir", "serve", "--index", "x", "--mode", "voir4"]).is_err());
    assert!(Cli::try_parse_from(["voir", "index", "build", "--images", "a", "--features", "b", "--out", "c"]).is_err());
}
