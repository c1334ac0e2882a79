use corefline_core::FormatKind;
use rand::Rng;

use crate::gen::random_word;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Corruption {
    InsertToken,
    DeleteAtom,
    DuplicateAtom,
    SwapAtoms,
    Typo,
    MangleTag,
    InsertTag,
    Loop,
}

impl Corruption {
    pub const ALL: [Corruption; 8] = [
        Corruption::InsertToken,
        Corruption::DeleteAtom,
        Corruption::DuplicateAtom,
        Corruption::SwapAtoms,
        Corruption::Typo,
        Corruption::MangleTag,
        Corruption::InsertTag,
        Corruption::Loop,
    ];
}

fn is_tag(atom: &str) -> bool {
    atom.starts_with('<') || atom.contains('|') || atom.starts_with("id=")
}

pub fn random_tag<R: Rng>(rng: &mut R, format: FormatKind) -> String {
    let k = rng.gen_range(0..6);
    match (format, rng.gen_range(0..3)) {
        (FormatKind::Crac, 0) => format!("{}|[e{k}]", random_word(rng)),
        (FormatKind::Crac, 1) => format!("{}|[e{k}", random_word(rng)),
        (FormatKind::Crac, _) => format!("{}|e{k}]", random_word(rng)),
        (FormatKind::ExplicitXml, 0) => format!("<ent id=COREF_{k}>"),
        (FormatKind::ExplicitXml, 1) => "</ent>".into(),
        (FormatKind::ExplicitXml, _) => format!("<zero_ent id=COREF_{k}>"),
        (FormatKind::MinimalXml, 0) => format!("<ent{k}>"),
        (FormatKind::MinimalXml, 1) => "</ent>".into(),
        (FormatKind::MinimalXml, _) => format!("<zero{k}>"),
        (FormatKind::HeadwordXml, 0 | 1) => format!("<ent{k}>"),
        (FormatKind::HeadwordXml, _) => format!("<zero{k}>"),
    }
}

fn typo<R: Rng>(rng: &mut R, word: &str) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let pos = rng.gen_range(0..=chars.len());
    let letter = (b'a' + rng.gen_range(0..26u8)) as char;
    match rng.gen_range(0..3) {
        0 if pos < chars.len() => chars[pos] = letter,
        1 if pos < chars.len() && chars.len() > 1 => {
            chars.remove(pos);
        }
        _ => chars.insert(pos, letter),
    }
    chars.into_iter().collect()
}

fn mangle<R: Rng>(rng: &mut R, tag: &str) -> String {
    match rng.gen_range(0..6) {
        0 => {
            let mut t = tag.to_string();
            t.pop();
            t
        }
        1 => tag.replace(|c: char| c.is_ascii_digit(), "x"),
        2 => tag.to_uppercase(),
        3 => "</ent>".into(),
        4 => format!("{tag}>"),
        _ => tag.replace(['<', '|'], ""),
    }
}

fn pick<R: Rng>(
    rng: &mut R,
    atoms: &[(usize, String)],
    pred: impl Fn(&str) -> bool,
) -> Option<usize> {
    let idx: Vec<usize> = (0..atoms.len()).filter(|&i| pred(&atoms[i].1)).collect();
    if idx.is_empty() {
        None
    } else {
        Some(idx[rng.gen_range(0..idx.len())])
    }
}

/// Applies one corruption to `text`. Line structure is kept except for
/// atoms moving between lines.
pub fn apply<R: Rng>(rng: &mut R, text: &str, format: FormatKind, op: Corruption) -> String {
    // (line, atom)
    let mut atoms: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .flat_map(|(l, line)| line.split_whitespace().map(move |a| (l, a.to_string())))
        .collect();
    let n = atoms.len();
    match op {
        Corruption::InsertToken => {
            let at = rng.gen_range(0..=n);
            let line = atoms.get(at.min(n.saturating_sub(1))).map_or(0, |a| a.0);
            atoms.insert(at, (line, random_word(rng)));
        }
        Corruption::DeleteAtom if n > 0 => {
            atoms.remove(rng.gen_range(0..n));
        }
        Corruption::DuplicateAtom if n > 0 => {
            let at = rng.gen_range(0..n);
            let a = atoms[at].clone();
            atoms.insert(at, a);
        }
        Corruption::SwapAtoms if n > 1 => {
            let at = rng.gen_range(0..n - 1);
            let (l0, l1) = (atoms[at].0, atoms[at + 1].0);
            atoms.swap(at, at + 1);
            atoms[at].0 = l0;
            atoms[at + 1].0 = l1;
        }
        Corruption::Typo => {
            if let Some(at) = pick(rng, &atoms, |a| !is_tag(a)) {
                atoms[at].1 = typo(rng, &atoms[at].1);
            }
        }
        Corruption::MangleTag => {
            if let Some(at) = pick(rng, &atoms, is_tag) {
                atoms[at].1 = mangle(rng, &atoms[at].1);
            }
        }
        Corruption::InsertTag => {
            let at = rng.gen_range(0..=n);
            let line = atoms.get(at.min(n.saturating_sub(1))).map_or(0, |a| a.0);
            for part in random_tag(rng, format).split(' ').rev() {
                atoms.insert(at, (line, part.to_string()));
            }
        }
        Corruption::Loop => {
            let times = rng.gen_range(2..=3);
            let cut = if rng.gen_bool(0.5) {
                n
            } else {
                rng.gen_range(0..=n)
            };
            let prefix = atoms[..cut].to_vec();
            let last_line = atoms.last().map_or(0, |a| a.0);
            for t in 1..times {
                atoms.extend(
                    prefix
                        .iter()
                        .map(|(l, a)| (l + t * (last_line + 1), a.clone())),
                );
            }
        }
        _ => {}
    }
    let mut out = String::new();
    let mut current = None;
    for (l, a) in atoms {
        match current {
            None => {}
            Some(c) if c == l => out.push(' '),
            Some(_) => out.push('\n'),
        }
        out.push_str(&a);
        current = Some(l);
    }
    out
}

/// One to four random corruptions.
pub fn corrupt<R: Rng>(rng: &mut R, text: &str, format: FormatKind) -> (String, Vec<Corruption>) {
    let mut out = text.to_string();
    let mut ops = Vec::new();
    for _ in 0..rng.gen_range(1..=4) {
        let op = Corruption::ALL[rng.gen_range(0..Corruption::ALL.len())];
        out = apply(rng, &out, format, op);
        ops.push(op);
    }
    (out, ops)
}
