use corefline_core::conllu::mention_head;
use corefline_core::formats::{Side, TagEvent};
use corefline_core::{
    AnnotatedText, Document, FormatKind, Mention, NodeId, Sentence, Span, TagKind, Token,
};
use rand::seq::SliceRandom;
use rand::Rng;

const VOCAB: &[&str] = &[
    "the", "the", "a", "cat", "dog", "she", "he", "it", "saw", "took", "house", "river", "old",
    "man", "woman", "and", "of", "to", ",", ".", "café", "Zoë", "naïve", "Lison", "brings",
    "flowers",
];

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub max_sentences: usize,
    pub max_tokens: usize,
    pub max_chains: usize,
    pub max_mentions_per_chain: usize,
    pub zero_prob: f64,
    pub discontinuous_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            max_sentences: 5,
            max_tokens: 10,
            max_chains: 4,
            max_mentions_per_chain: 4,
            zero_prob: 0.3,
            discontinuous_prob: 0.15,
        }
    }
}

pub fn random_word<R: Rng>(rng: &mut R) -> String {
    VOCAB.choose(rng).expect("non-empty").to_string()
}

fn random_sentence<R: Rng>(rng: &mut R, sent_id: String, cfg: &GenConfig) -> Sentence {
    let n = rng.gen_range(1..=cfg.max_tokens);
    let mut tokens: Vec<Token> = (1..=n)
        .map(|i| Token::new(NodeId::word(i), random_word(rng)))
        .collect();
    // Random tree: each token attaches to one placed before it in a shuffled order.
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    for (k, &t) in order.iter().enumerate() {
        let head = if k == 0 {
            0
        } else {
            order[rng.gen_range(0..k)]
        };
        tokens[t - 1].dep_head = Some(head);
        tokens[t - 1].deprel = if head == 0 {
            "root".into()
        } else {
            "dep".into()
        };
    }
    let mut s = Sentence {
        sent_id,
        tokens,
        ..Sentence::default()
    };
    s.text = Some(s.surface_text());
    s
}

fn fragments_conflict(a: &[Span], b: &[Span]) -> bool {
    a.iter()
        .any(|x| b.iter().any(|y| x.crosses(y) || y.crosses(x)))
}

/// Whether the first-to-last extents of two mentions overlap.
fn extents_overlap(a: &Mention, b: &Mention) -> bool {
    let extent = |m: &Mention| (m.fragments[0].start, m.fragments[m.fragments.len() - 1].end);
    let (a0, a1) = extent(a);
    let (b0, b1) = extent(b);
    a0 <= b1 && b0 <= a1
}

fn try_span_mention<R: Rng>(
    rng: &mut R,
    doc: &Document,
    chain: &str,
    s_idx: usize,
    cfg: &GenConfig,
) -> Option<Mention> {
    let sentence = &doc.sentences[s_idx];
    let n = sentence.tokens.len();
    let start = rng.gen_range(1..=n);
    let end = rng.gen_range(start..=(start + 3).min(n));
    let mut fragments = vec![Span::new(NodeId::word(start), NodeId::word(end))];
    if end + 2 <= n && rng.gen_bool(cfg.discontinuous_prob) {
        let s2 = rng.gen_range(end + 2..=n);
        let e2 = rng.gen_range(s2..=(s2 + 2).min(n));
        fragments.push(Span::new(NodeId::word(s2), NodeId::word(e2)));
    }
    let head_fragment = fragments[rng.gen_range(0..fragments.len())];
    let nodes = sentence.span_nodes(&head_fragment);
    let head = mention_head(sentence, &nodes, None);
    let mut m = Mention::new(chain, s_idx, fragments, head);
    if rng.gen_bool(0.3) {
        m.attrs = vec!["person".into()];
    }
    let clash = doc.mentions().filter(|o| o.sentence == s_idx).any(|o| {
        fragments_conflict(&o.fragments, &m.fragments)
            || o.head == m.head
            || (o.chain_id == m.chain_id
                && (o.fragments == m.fragments
                    || ((o.fragments.len() > 1 || m.fragments.len() > 1)
                        && extents_overlap(o, &m))))
    });
    (!clash).then_some(m)
}

/// A small random document: up to 5 sentences and 4 chains, with nested
/// and discontinuous mentions and zero mentions on empty nodes. Every
/// empty node carries exactly one zero mention and no two mentions share
/// a head. Span heads follow the dependency fallback on the head fragment.
pub fn random_document<R: Rng>(rng: &mut R, doc_id: &str, cfg: &GenConfig) -> Document {
    let mut doc = Document::new(doc_id);
    let n_sent = rng.gen_range(1..=cfg.max_sentences);
    for i in 0..n_sent {
        doc.sentences
            .push(random_sentence(rng, format!("{doc_id}-{}", i + 1), cfg));
    }

    let n_chains = rng.gen_range(0..=cfg.max_chains);
    let mut numbers: Vec<u32> = (1..100).collect();
    numbers.shuffle(rng);
    let chain_ids: Vec<String> = numbers[..n_chains]
        .iter()
        .map(|n| format!("e{n}"))
        .collect();

    for chain in &chain_ids {
        let wanted = rng.gen_range(1..=cfg.max_mentions_per_chain);
        let mut placed = 0;
        for _ in 0..wanted * 6 {
            if placed == wanted {
                break;
            }
            let s_idx = rng.gen_range(0..n_sent);
            if let Some(m) = try_span_mention(rng, &doc, chain, s_idx, cfg) {
                doc.add_mention(m);
                placed += 1;
            }
        }
    }

    if !chain_ids.is_empty() {
        for s_idx in 0..n_sent {
            if !rng.gen_bool(cfg.zero_prob) {
                continue;
            }
            for _ in 0..rng.gen_range(1..=2) {
                let sentence = &mut doc.sentences[s_idx];
                let n = sentence.tokens.len();
                let anchor = rng.gen_range(0..=n);
                let id = NodeId::empty(anchor, sentence.next_empty_index(anchor));
                let mut node = Token::new(id, "_");
                node.deps = format!("{}:nsubj", rng.gen_range(1..=n));
                sentence.insert_empty_node(node);
                let chain = chain_ids.choose(rng).expect("non-empty");
                doc.add_mention(Mention::new(
                    chain.as_str(),
                    s_idx,
                    vec![Span::single(id)],
                    id,
                ));
            }
        }
    }
    doc.normalize();
    doc
}

pub fn random_documents(seed: u64, count: usize, cfg: &GenConfig) -> Vec<Document> {
    let mut rng = crate::rng(seed);
    (0..count)
        .map(|i| random_document(&mut rng, &format!("doc{i}"), cfg))
        .collect()
}

/// A window of up to 30 tokens with head, zero and single-token span tags
/// carrying global `e<n>` labels.
pub fn random_window<R: Rng>(rng: &mut R) -> AnnotatedText {
    let n = rng.gen_range(0..30);
    let mut t = AnnotatedText::plain(
        (0..n).map(|i| format!("w{i}")).collect(),
        Vec::new(),
        FormatKind::MinimalXml,
    );
    for i in 0..n {
        match rng.gen_range(0..5) {
            0 => t.events.push(TagEvent::new(
                TagKind::Head(format!("e{}", rng.gen_range(1..60))),
                i,
                Side::After,
            )),
            1 => t.events.push(TagEvent::new(
                TagKind::ZeroHead(format!("e{}", rng.gen_range(1..60))),
                i,
                Side::After,
            )),
            2 => {
                t.events.push(TagEvent::new(
                    TagKind::Open(format!("e{}", rng.gen_range(1..60))),
                    i,
                    Side::Before,
                ));
                t.events.push(TagEvent::new(TagKind::Close, i, Side::After));
            }
            _ => {}
        }
    }
    t
}
