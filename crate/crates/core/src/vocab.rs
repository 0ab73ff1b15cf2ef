//! Fixed synthetic vocabulary.
//!
//! The id space is laid out in four disjoint blocks: control tokens, content
//! tokens (the "important" words a summary must keep), filler tokens (droppable),
//! and one atomic number token per value 0..=127 used to state counts in
//! prompts.

pub type TokenId = u32;
pub type TokenSequence = Vec<TokenId>;

pub const N_CONTROL: u32 = 8;
pub const N_CONTENT: u32 = 64;
pub const N_FILLER: u32 = 64;
pub const N_NUMBERS: u32 = 128;

/// Largest count representable by a number token.
pub const MAX_NUMBER: u32 = N_NUMBERS - 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    content_start: u32,
    filler_start: u32,
    number_start: u32,
    size: u32,
}

impl Vocab {
    pub const BOS: TokenId = 0;
    pub const EOS: TokenId = 1;
    pub const PAD: TokenId = 2;
    pub const SRC: TokenId = 3;
    pub const LEN: TokenId = 4;
    pub const KEEP: TokenId = 5;
    pub const DEL: TokenId = 6;
    pub const COMPRESS: TokenId = 7;

    /// The standard layout: controls 0..8, content 8..72, filler 72..136,
    /// numbers 136..264.
    pub fn standard() -> Self {
        Self {
            content_start: N_CONTROL,
            filler_start: N_CONTROL + N_CONTENT,
            number_start: N_CONTROL + N_CONTENT + N_FILLER,
            size: N_CONTROL + N_CONTENT + N_FILLER + N_NUMBERS,
        }
    }

    pub fn size(&self) -> usize {
        self.size as usize
    }

    pub fn content_token(&self, i: u32) -> TokenId {
        assert!(i < N_CONTENT);
        self.content_start + i
    }

    pub fn filler_token(&self, i: u32) -> TokenId {
        assert!(i < N_FILLER);
        self.filler_start + i
    }

    pub fn number_token(&self, value: u32) -> Option<TokenId> {
        (value <= MAX_NUMBER).then(|| self.number_start + value)
    }

    pub fn is_control(&self, id: TokenId) -> bool {
        id < self.content_start
    }

    pub fn is_content(&self, id: TokenId) -> bool {
        (self.content_start..self.filler_start).contains(&id)
    }

    pub fn is_filler(&self, id: TokenId) -> bool {
        (self.filler_start..self.number_start).contains(&id)
    }

    pub fn is_number(&self, id: TokenId) -> bool {
        (self.number_start..self.size).contains(&id)
    }

    pub fn number_value(&self, id: TokenId) -> Option<u32> {
        self.is_number(id).then(|| id - self.number_start)
    }

    /// True for tokens that count toward sequence lengths in evaluation:
    /// content, filler, and number tokens. Control tokens (including EOS) do not.
    pub fn counts_for_length(&self, id: TokenId) -> bool {
        id >= self.content_start && id < self.size
    }

    /// Length-counted view of a sequence (controls and EOS stripped).
    pub fn countable(&self, seq: &[TokenId]) -> TokenSequence {
        seq.iter().copied().filter(|&t| self.counts_for_length(t)).collect()
    }

    pub fn token_name(&self, id: TokenId) -> String {
        match id {
            Self::BOS => "<bos>".into(),
            Self::EOS => "<eos>".into(),
            Self::PAD => "<pad>".into(),
            Self::SRC => "<src>".into(),
            Self::LEN => "<len>".into(),
            Self::KEEP => "<keep>".into(),
            Self::DEL => "<del>".into(),
            Self::COMPRESS => "<compress>".into(),
            _ if self.is_content(id) => format!("c{}", id - self.content_start),
            _ if self.is_filler(id) => format!("f{}", id - self.filler_start),
            _ if self.is_number(id) => format!("<n{}>", id - self.number_start),
            _ => format!("<invalid:{id}>"),
        }
    }

    /// One-line layout description for sidecar headers.
    pub fn layout_line(&self) -> String {
        format!(
            "control=0..{} content={}..{} filler={}..{} number={}..{}",
            self.content_start,
            self.content_start,
            self.filler_start,
            self.filler_start,
            self.number_start,
            self.number_start,
            self.size
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_disjoint_and_cover_everything() {
        let v = Vocab::standard();
        assert_eq!(v.size(), 264);
        for id in 0..v.size() as u32 {
            let classes = [v.is_control(id), v.is_content(id), v.is_filler(id), v.is_number(id)];
            assert_eq!(classes.iter().filter(|&&c| c).count(), 1, "token {id}");
        }
    }

    #[test]
    fn every_number_has_exactly_one_token() {
        let v = Vocab::standard();
        let mut seen = std::collections::HashSet::new();
        for value in 0..=MAX_NUMBER {
            let id = v.number_token(value).unwrap();
            assert!(seen.insert(id));
            assert_eq!(v.number_value(id), Some(value));
        }
        assert!(v.number_token(MAX_NUMBER + 1).is_none());
    }

    #[test]
    fn length_counting_excludes_controls() {
        let v = Vocab::standard();
        let seq = vec![Vocab::BOS, v.content_token(0), Vocab::COMPRESS, v.filler_token(1), Vocab::EOS];
        assert_eq!(v.countable(&seq).len(), 2);
    }
}
