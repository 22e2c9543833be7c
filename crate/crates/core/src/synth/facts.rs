//! Needle facts: invented subjects, ten relation templates, each with a
//! paired question.

const PREFIX: &[&str] = &["Kal", "Vor", "Bren", "Ost", "Tam", "Quel", "Mir", "Dun", "Hask", "Pel"];
const SUFFIX: &[&str] = &["mora", "vale", "dune", "wick", "aris", "enth", "ogar", "ilde", "usk", "ara"];

struct Relation {
    fact: &'static str,
    question: &'static str,
    objects: [&'static str; 10],
}

const RELATIONS: &[Relation] = &[
    Relation {
        fact: "The secret ingredient of the {s} stew is {o}.",
        question: "What is the secret ingredient of the {s} stew?",
        objects: ["saffron", "cardamom", "juniper", "sumac", "fennel", "anise", "tamarind", "mace", "sorrel", "galangal"],
    },
    Relation {
        fact: "The {s} lighthouse was painted {o} in its first year.",
        question: "What color was the {s} lighthouse painted in its first year?",
        objects: ["crimson", "teal", "ochre", "violet", "amber", "olive", "indigo", "coral", "slate", "mustard"],
    },
    Relation {
        fact: "The best hour to visit the {s} gardens is {o}.",
        question: "What is the best hour to visit the {s} gardens?",
        objects: ["dawn", "noon", "dusk", "midnight", "sunrise", "teatime", "twilight", "midmorning", "evening", "daybreak"],
    },
    Relation {
        fact: "The {s} choir rehearses every {o}.",
        question: "On which day does the {s} choir rehearse?",
        objects: ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday", "fortnight", "solstice", "equinox"],
    },
    Relation {
        fact: "The mascot of the {s} rowing club is a {o}.",
        question: "What is the mascot of the {s} rowing club?",
        objects: ["heron", "otter", "badger", "lynx", "walrus", "falcon", "beaver", "stoat", "pelican", "marten"],
    },
    Relation {
        fact: "The oldest tree in the {s} park is a {o}.",
        question: "What kind of tree is the oldest in the {s} park?",
        objects: ["yew", "cedar", "linden", "hornbeam", "sycamore", "larch", "rowan", "hawthorn", "alder", "chestnut"],
    },
    Relation {
        fact: "The {s} library keeps its rarest map in a {o} box.",
        question: "In what kind of box does the {s} library keep its rarest map?",
        objects: ["copper", "walnut", "pewter", "ivory", "bamboo", "leather", "tin", "glass", "marble", "cork"],
    },
    Relation {
        fact: "Travelers reach the {s} monastery by {o}.",
        question: "How do travelers reach the {s} monastery?",
        objects: ["ferry", "funicular", "mule", "sledge", "gondola", "canoe", "tram", "bicycle", "balloon", "raft"],
    },
    Relation {
        fact: "The {s} bakery is famous for its {o} bread.",
        question: "What bread is the {s} bakery famous for?",
        objects: ["rye", "barley", "spelt", "millet", "buckwheat", "oat", "sourdough", "chestnut", "acorn", "teff"],
    },
    Relation {
        fact: "The founder of the {s} observatory was born in {o}.",
        question: "Where was the founder of the {s} observatory born?",
        objects: ["Lisbon", "Tromso", "Valparaiso", "Tbilisi", "Hobart", "Quebec", "Split", "Cusco", "Tallinn", "Zanzibar"],
    },
];

/// A fact sentence and the question that retrieves it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeedleFact {
    pub subject: String,
    pub sentence: String,
    pub question: String,
}

pub fn fact_count() -> usize {
    PREFIX.len() * SUFFIX.len()
}

/// The `i`-th fact, `0 ≤ i < fact_count()`. Subjects are unique per fact.
pub fn fact(i: usize) -> NeedleFact {
    let subject = format!("{}{}", PREFIX[i / SUFFIX.len()], SUFFIX[i % SUFFIX.len()]);
    let rel = &RELATIONS[i % RELATIONS.len()];
    let object = rel.objects[(i / RELATIONS.len() + 3 * i) % rel.objects.len()];
    NeedleFact {
        sentence: rel.fact.replace("{s}", &subject).replace("{o}", object),
        question: rel.question.replace("{s}", &subject),
        subject,
    }
}
