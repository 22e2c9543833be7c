//! Person names for the passkey task: every first name paired with every
//! last name.

const FIRST: &[&str] = &[
    "Ada", "Alan", "Alma", "Amos", "Anya", "Arlo", "Bea", "Bram", "Cara", "Cyril", "Dalia", "Dario",
    "Delia", "Edgar", "Elsa", "Emil", "Enzo", "Esme", "Fern", "Felix", "Gemma", "Gideon", "Greta",
    "Hana", "Hugo", "Ida", "Ines", "Ivo", "Jada", "Jonas", "Juno", "Kai", "Kira", "Lars", "Lena",
    "Levi", "Lila", "Luca", "Mabel", "Milo", "Mira", "Nadia", "Nico", "Nora", "Odile", "Omar",
    "Orla", "Otto", "Pia", "Quentin", "Rafe", "Rhea", "Rosa", "Rufus", "Sabine", "Silas", "Soren",
    "Tamsin", "Tess", "Theo", "Uma", "Vera", "Viggo", "Wren", "Xavi", "Yara", "Yusuf", "Zelda",
    "Zeno", "Zora",
];

const LAST: &[&str] = &[
    "Abbott", "Alder", "Ashby", "Barlow", "Beckett", "Blythe", "Brandt", "Calloway", "Carver",
    "Dalton", "Delacroix", "Drummond", "Eastwood", "Ellery", "Falk", "Fairbanks", "Galloway",
    "Garnett", "Hale", "Hargrove", "Hollis", "Ibarra", "Ingram", "Jansen", "Jarvis", "Kell",
    "Kingsley", "Lachance", "Lindqvist", "Lockwood", "Marlowe", "Mercer", "Moreau", "Nakamura",
    "Norcross", "Oakes", "Okafor", "Orwell", "Pemberton", "Prescott", "Quill", "Radcliffe",
    "Renner", "Rowntree", "Salazar", "Sinclair", "Strand", "Thackeray", "Thorne", "Tremaine",
    "Underhill", "Upton", "Valdez", "Vance", "Varga", "Wexler", "Whitlock", "Winslow", "Xiong",
    "Yardley", "Yilmaz", "Zamora", "Zellweger", "Ziegler", "Ostrander", "Quimby", "Harrow",
    "Fenwick", "Blackwood", "Ellsworth",
];

/// Number of distinct names available.
pub fn name_count() -> usize {
    FIRST.len() * LAST.len()
}

/// The `i`-th name, `0 ≤ i < name_count()`.
pub fn name(i: usize) -> String {
    format!("{} {}", FIRST[i / LAST.len()], LAST[i % LAST.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn at_least_4000_unique_names() {
        assert!(name_count() >= 4000);
        let all: HashSet<String> = (0..name_count()).map(name).collect();
        assert_eq!(all.len(), name_count());
    }
}
