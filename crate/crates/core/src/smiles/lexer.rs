use super::SmilesError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    AtomOrganic,
    AtomBracket,
    Bond,
    RingClosure,
    BranchOpen,
    BranchClose,
    Dot,
}

/// A lexical unit of a SMILES string, borrowing its text from the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub position: usize,
}

const ORGANIC_TWO_LETTER: [&str; 2] = ["Cl", "Br"];
const ORGANIC_ONE_LETTER: &[u8] = b"BCNOPSFIbcnops";

/// Split a SMILES string into tokens. Every character of the input belongs to exactly one token.
pub fn tokenize(smiles: &str) -> Result<Vec<Token<'_>>, SmilesError> {
    if smiles.is_empty() {
        return Err(SmilesError::Empty);
    }
    if let Some(position) = smiles.bytes().position(|b| !b.is_ascii()) {
        return Err(SmilesError::UnexpectedCharacter {
            position,
            character: smiles[position..].chars().next().unwrap_or('?'),
        });
    }

    let bytes = smiles.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let c = bytes[pos];
        let (kind, len) = match c {
            b'[' => {
                let close = bytes[pos + 1..]
                    .iter()
                    .position(|&b| b == b']' || b == b'[')
                    .filter(|&off| bytes[pos + 1 + off] == b']')
                    .ok_or(SmilesError::UnterminatedBracket { position: pos })?;
                (TokenKind::AtomBracket, close + 2)
            }
            b'(' => (TokenKind::BranchOpen, 1),
            b')' => (TokenKind::BranchClose, 1),
            b'.' => (TokenKind::Dot, 1),
            b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => (TokenKind::Bond, 1),
            b'0'..=b'9' => (TokenKind::RingClosure, 1),
            b'%' => {
                let digits = bytes.get(pos + 1..pos + 3);
                match digits {
                    Some(d) if d.iter().all(u8::is_ascii_digit) => (TokenKind::RingClosure, 3),
                    _ => {
                        return Err(SmilesError::UnexpectedCharacter {
                            position: pos,
                            character: '%',
                        })
                    }
                }
            }
            _ => {
                let two = smiles.get(pos..pos + 2);
                if two.is_some_and(|t| ORGANIC_TWO_LETTER.contains(&t)) {
                    (TokenKind::AtomOrganic, 2)
                } else if ORGANIC_ONE_LETTER.contains(&c) {
                    (TokenKind::AtomOrganic, 1)
                } else {
                    return Err(SmilesError::UnexpectedCharacter {
                        position: pos,
                        character: c as char,
                    });
                }
            }
        };
        tokens.push(Token {
            kind,
            text: &smiles[pos..pos + len],
            position: pos,
        });
        pos += len;
    }
    Ok(tokens)
}
