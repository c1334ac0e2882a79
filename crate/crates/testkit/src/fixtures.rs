use corefline_core::{parse_conllu, Document, FormatKind, Mention, NodeId, Sentence, Span, Token};

fn row(id: &str, form: &str, head: &str, misc: &str) -> String {
    format!("{id}\t{form}\t_\t_\t_\t_\t{head}\t_\t_\t{misc}")
}

/// The Lison sentence: e1 = {Lison, her, zero subject of "brings"},
/// e2 = {her sister}.
pub fn lison_conllu() -> String {
    let rows = [
        row("1", "When", "3", "_"),
        row("2", "Lison", "3", "Entity=(e1--1)"),
        row("3", "visits", "7", "_"),
        row("4", "her", "5", "Entity=(e2--2(e1--1)"),
        row("5", "sister", "3", "Entity=e2)"),
        row("6", ",", "7", "_"),
        row("7", "brings", "0", "_"),
        "7.1\t#PersPron\t_\t_\t_\t_\t_\t_\t7:nsubj\tEntity=(e1--1)".to_string(),
        row("8", "flowers.", "7", "_"),
    ];
    format!(
        "# newdoc id = lison\n# sent_id = 1\n# text = When Lison visits her sister, brings flowers.\n{}\n\n",
        rows.join("\n")
    )
}

pub fn lison_document() -> Document {
    parse_conllu(&lison_conllu())
        .expect("fixture parses")
        .documents
        .remove(0)
}

pub const LISON_INPUT: &str = "When Lison visits her sister , brings flowers.";

/// The sentence in each of the four formats.
pub const LISON_ROWS: [(FormatKind, &str); 4] = [
    (
        FormatKind::Crac,
        "When Lison|[e1] visits her|[e1],[e2 sister|e2] , brings ##|[e1] flowers.",
    ),
    (
        FormatKind::ExplicitXml,
        "When <ent id=COREF_1> Lison </ent> visits <ent id=COREF_2> <ent id=COREF_1> her </ent> sister </ent> , brings <zero_ent id=COREF_1> flowers.",
    ),
    (
        FormatKind::MinimalXml,
        "When <ent1> Lison </ent> visits <ent2> <ent1> her </ent> sister </ent> , brings <zero1> flowers.",
    ),
    (
        FormatKind::HeadwordXml,
        "When Lison <ent1> visits her <ent1> sister <ent2> , brings <zero1> flowers.",
    ),
];

/// Display labels of the Lison rows: `e1 -> 1`, `e2 -> 2`.
pub fn lison_label(chain: &str) -> Option<String> {
    chain.strip_prefix('e').map(str::to_string)
}

fn chain_sentence(id: &str, words: &[String]) -> Sentence {
    let mut s = Sentence {
        sent_id: id.into(),
        ..Sentence::default()
    };
    for (i, w) in words.iter().enumerate() {
        let mut t = Token::new(NodeId::word(i + 1), w.as_str());
        t.dep_head = Some(if i == 0 { 0 } else { 1 });
        s.tokens.push(t);
    }
    s
}

/// e1 is mentioned in sentences 1 and 3; the 15-word sentence 2 between
/// them pushes the first mention out of any context budget below 17 words.
pub fn gap_document() -> Document {
    let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>();
    let mut doc = Document::new("gap");
    doc.sentences
        .push(chain_sentence("1", &words(&["Anna", "sleeps"])));
    doc.sentences.push(chain_sentence(
        "2",
        &(0..15).map(|i| format!("x{i}")).collect::<Vec<_>>(),
    ));
    doc.sentences
        .push(chain_sentence("3", &words(&["Anna", "wakes"])));
    let w = NodeId::word;
    doc.add_mention(Mention::new("e1", 0, vec![Span::single(w(1))], w(1)));
    doc.add_mention(Mention::new("e1", 2, vec![Span::single(w(1))], w(1)));
    doc.add_mention(Mention::new("e2", 1, vec![Span::new(w(1), w(2))], w(1)));
    doc.add_mention(Mention::new("e2", 1, vec![Span::single(w(14))], w(14)));
    doc.normalize();
    doc
}
