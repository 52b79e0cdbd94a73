//! A seeded synthetic country for end-to-end runs.
//!
//! Towns `stadNN` sit in a Sweden-sized box. Residents post from within a few
//! kilometres of home using `bor i`, `hemma i` and `ska till` before the town
//! name; check-ins carry a venue tag `#platsNN` at the exact town position.
//! Polylocational words `polyNN` are used tightly in three towns, regional
//! words `bygdNN` loosely around one spot, and the noise vocabulary `ordNNNN`
//! everywhere. A capital, `kapitalstad`, is talked about all over the country.
//!
//! Test documents read like a user's collected posts: a long run of noise with
//! a few planted phrases. Their home town appears in a slot, neighbouring towns
//! and the capital appear outside any slot.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Document, Post};
use crate::gazetteer::{Gazetteer, GazetteerEntry};
use crate::geo::{haversine, GeoPoint, KM_PER_DEGREE};

pub const CAPITAL: &str = "kapitalstad";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub south_west: (f64, f64),
    pub north_east: (f64, f64),
    pub capital: (f64, f64),
    pub towns: usize,
    pub noise_vocab: usize,
    pub poly_words: usize,
    pub regional_words: usize,
    /// Town-name posts per town.
    pub resident_posts: usize,
    pub venue_posts: usize,
    pub poly_posts_per_town: usize,
    pub regional_posts: usize,
    pub noise_posts: usize,
    /// Spread of resident posts around their town, km.
    pub resident_sigma_km: f64,
    pub poly_sigma_km: f64,
    pub regional_sigma_km: f64,
    pub test_docs: usize,
    pub doc_tokens: (usize, usize),
    /// Probability of each planted phrase in a test document.
    pub p_home_slot: f64,
    pub p_venue_slot: f64,
    pub p_poly_slot: f64,
    pub p_regional_slot: f64,
    pub p_neighbour: f64,
    pub capital_mentions: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            south_west: (55.5, 12.5),
            north_east: (65.5, 22.0),
            capital: (59.33, 18.07),
            towns: 30,
            noise_vocab: 2000,
            poly_words: 15,
            regional_words: 20,
            resident_posts: 60,
            venue_posts: 12,
            poly_posts_per_town: 5,
            regional_posts: 30,
            noise_posts: 2500,
            resident_sigma_km: 2.0,
            poly_sigma_km: 1.5,
            regional_sigma_km: 15.0,
            test_docs: 500,
            doc_tokens: (900, 1200),
            p_home_slot: 0.7,
            p_venue_slot: 0.2,
            p_poly_slot: 0.3,
            p_regional_slot: 0.4,
            p_neighbour: 0.9,
            capital_mentions: (3, 6),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub towns: Vec<(String, GeoPoint)>,
    pub capital: GeoPoint,
    pub train: Vec<Post>,
    /// Gold-located test documents as raw posts, one per document.
    pub test: Vec<Post>,
}

/// Paths written by [`SynthWorld::write_to`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub train: PathBuf,
    pub test: PathBuf,
    pub gazetteer: PathBuf,
}

fn offset(p: GeoPoint, dx_km: f64, dy_km: f64) -> GeoPoint {
    let lat = (p.lat() + dy_km / KM_PER_DEGREE).clamp(-89.0, 89.0);
    let lon = p.lon() + dx_km / (KM_PER_DEGREE * lat.to_radians().cos());
    GeoPoint::new(lat, lon).expect("offset stays on the globe")
}

struct Gen {
    rng: ChaCha8Rng,
    noise: Vec<String>,
}

impl Gen {
    fn near(&mut self, p: GeoPoint, sigma_km: f64) -> GeoPoint {
        let n = Normal::new(0.0, sigma_km).expect("positive sigma");
        let (dx, dy) = (n.sample(&mut self.rng), n.sample(&mut self.rng));
        offset(p, dx, dy)
    }

    fn noise_words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.noise.choose(&mut self.rng).expect("noise vocabulary").clone()).collect()
    }

    fn noise_between(&mut self, lo: usize, hi: usize) -> Vec<String> {
        let n = self.rng.random_range(lo..=hi);
        self.noise_words(n)
    }
}

impl SynthWorld {
    pub fn generate(cfg: &SynthConfig) -> Self {
        let mut g = Gen {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            noise: (0..cfg.noise_vocab).map(|i| format!("ord{i:04}")).collect(),
        };
        let (s, w) = cfg.south_west;
        let (n, e) = cfg.north_east;
        let uniform = |rng: &mut ChaCha8Rng| {
            GeoPoint::new(rng.random_range(s..n), rng.random_range(w..e)).expect("box inside the globe")
        };
        let towns: Vec<(String, GeoPoint)> =
            (0..cfg.towns).map(|i| (format!("stad{i:02}"), uniform(&mut g.rng))).collect();
        let capital = GeoPoint::new(cfg.capital.0, cfg.capital.1).expect("capital");

        let mut train: Vec<(GeoPoint, String)> = Vec::new();
        for (t, (name, home)) in towns.iter().enumerate() {
            for i in 0..cfg.resident_posts {
                let phrase = ["bor i", "hemma i", "ska till"][i % 3];
                let mut words = g.noise_between(0, 2);
                words.insert(g.rng.random_range(0..=words.len()), format!("{phrase} {name}"));
                let loc = g.near(*home, cfg.resident_sigma_km);
                train.push((loc, words.join(" ")));
            }
            for _ in 0..cfg.venue_posts {
                train.push((*home, format!("#plats{t:02}")));
            }
        }
        for p in 0..cfg.poly_words {
            let homes: Vec<GeoPoint> = towns.choose_multiple(&mut g.rng, 3).map(|(_, h)| *h).collect();
            for home in homes {
                for _ in 0..cfg.poly_posts_per_town {
                    let loc = g.near(home, cfg.poly_sigma_km);
                    let mut words = g.noise_words(2);
                    words.insert(1, format!("poly{p:02}"));
                    train.push((loc, words.join(" ")));
                }
            }
        }
        for r in 0..cfg.regional_words {
            let centre = uniform(&mut g.rng);
            for _ in 0..cfg.regional_posts {
                let loc = g.near(centre, cfg.regional_sigma_km);
                let mut words = g.noise_words(2);
                words.insert(1, format!("bygd{r:02}"));
                train.push((loc, words.join(" ")));
            }
        }
        for _ in 0..cfg.noise_posts {
            let loc = uniform(&mut g.rng);
            let mut words = g.noise_between(8, 16);
            if g.rng.random_bool(0.15) {
                let at = g.rng.random_range(0..=words.len());
                words.insert(at, CAPITAL.to_string());
            }
            train.push((loc, words.join(" ")));
        }
        let train = train
            .into_iter()
            .enumerate()
            .map(|(i, (loc, text))| Post::new(format!("t{i:05}"), text, Some(loc)).expect("non-empty post"))
            .collect();

        let test = (0..cfg.test_docs).map(|i| test_doc(&mut g, cfg, &towns, i)).collect();
        Self { towns, capital, train, test }
    }

    pub fn gazetteer_entries(&self) -> Vec<GazetteerEntry> {
        let mut out: Vec<GazetteerEntry> = self
            .towns
            .iter()
            .map(|(name, loc)| GazetteerEntry { name: name.clone(), location: *loc, population_rank: None })
            .collect();
        out.push(GazetteerEntry { name: CAPITAL.to_string(), location: self.capital, population_rank: Some(1) });
        out
    }

    pub fn gazetteer(&self) -> Gazetteer {
        Gazetteer::from_entries(self.gazetteer_entries())
    }

    pub fn test_documents(&self) -> Vec<Document> {
        self.test.iter().map(Document::from_post).collect()
    }

    /// Writes `train.tsv`, `test.tsv` (both `id lat lon text`) and `gazetteer.tsv` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> io::Result<SynthFiles> {
        let dir = dir.as_ref();
        let files = SynthFiles {
            train: dir.join("train.tsv"),
            test: dir.join("test.tsv"),
            gazetteer: dir.join("gazetteer.tsv"),
        };
        write_posts(&files.train, &self.train)?;
        write_posts(&files.test, &self.test)?;
        let mut out = BufWriter::new(File::create(&files.gazetteer)?);
        for e in self.gazetteer_entries() {
            write!(out, "{}\t{}\t{}", e.name, e.location.lat(), e.location.lon())?;
            match e.population_rank {
                Some(r) => writeln!(out, "\t{r}")?,
                None => writeln!(out)?,
            }
        }
        out.flush()?;
        Ok(files)
    }
}

fn write_posts(path: &Path, posts: &[Post]) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "id\tlat\tlon\ttext")?;
    for p in posts {
        let loc = p.location().expect("synthetic posts are located");
        writeln!(out, "{}\t{}\t{}\t{}", p.id(), loc.lat(), loc.lon(), p.text())?;
    }
    out.flush()
}

fn test_doc(g: &mut Gen, cfg: &SynthConfig, towns: &[(String, GeoPoint)], i: usize) -> Post {
    let t = g.rng.random_range(0..towns.len());
    let (name, home) = &towns[t];
    let gold = g.near(*home, 3.0);

    let mut phrases: Vec<String> = Vec::new();
    if g.rng.random_bool(cfg.p_home_slot) {
        phrases.push(format!("bor i {name}"));
    }
    if g.rng.random_bool(cfg.p_venue_slot) {
        phrases.push(format!("hemma i #plats{t:02}"));
    }
    if g.rng.random_bool(cfg.p_poly_slot) {
        phrases.push(format!("ska till poly{:02}", g.rng.random_range(0..cfg.poly_words)));
    }
    if g.rng.random_bool(cfg.p_regional_slot) {
        phrases.push(format!("ska till bygd{:02}", g.rng.random_range(0..cfg.regional_words)));
    }
    if g.rng.random_bool(cfg.p_neighbour) {
        // one of the three nearest other towns, mentioned in passing
        let mut others: Vec<(f64, &String)> =
            towns.iter().filter(|(n, _)| n != name).map(|(n, p)| (haversine(*home, *p), n)).collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0));
        phrases.push(others[g.rng.random_range(0..3.min(others.len()))].1.clone());
    }
    for _ in 0..g.rng.random_range(cfg.capital_mentions.0..=cfg.capital_mentions.1) {
        phrases.push(CAPITAL.to_string());
    }

    let len = g.rng.random_range(cfg.doc_tokens.0..=cfg.doc_tokens.1);
    let mut words = g.noise_words(len);
    // distinct insertion points, applied back to front so indices stay valid
    let mut slots: Vec<usize> = (0..=words.len()).collect();
    slots.shuffle(&mut g.rng);
    let mut at: Vec<usize> = slots.into_iter().take(phrases.len()).collect();
    at.sort_unstable_by(|a, b| b.cmp(a));
    for (pos, phrase) in at.into_iter().zip(phrases) {
        words.insert(pos, phrase);
    }
    Post::new(format!("d{i:04}"), words.join(" "), Some(gold)).expect("non-empty document")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig { test_docs: 5, noise_posts: 20, ..SynthConfig::default() };
        let a = SynthWorld::generate(&cfg);
        let b = SynthWorld::generate(&cfg);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = SynthWorld::generate(&SynthConfig { seed: 8, ..cfg });
        assert_ne!(a.train, c.train);
    }
}
