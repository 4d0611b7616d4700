//! Maps a path inside a JSON document to the 1-based line it starts on.
//!
//! Only used on documents that already parsed, so the scanner skips rather
//! than validates.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Seg {
    Key(String),
    Index(usize),
}

struct Scan<'a> {
    b: &'a [u8],
    i: usize,
    line: usize,
}

impl Scan<'_> {
    fn peek(&self) -> Option<u8> {
        self.b.get(self.i).copied()
    }

    fn bump(&mut self) {
        if self.peek() == Some(b'\n') {
            self.line += 1;
        }
        self.i += 1;
    }

    fn ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.bump();
        }
    }

    /// Consumes a string literal at the cursor; returns its raw contents.
    fn string(&mut self) -> Option<String> {
        if self.peek() != Some(b'"') {
            return None;
        }
        self.bump();
        let start = self.i;
        loop {
            match self.peek()? {
                b'\\' => {
                    self.bump();
                    self.bump();
                }
                b'"' => {
                    let s = String::from_utf8_lossy(&self.b[start..self.i]).into_owned();
                    self.bump();
                    return Some(s);
                }
                _ => self.bump(),
            }
        }
    }

    fn skip_value(&mut self) -> Option<()> {
        self.ws();
        match self.peek()? {
            b'"' => self.string().map(|_| ()),
            b'{' | b'[' => {
                let mut depth = 0usize;
                loop {
                    match self.peek()? {
                        b'"' => {
                            self.string()?;
                            continue;
                        }
                        b'{' | b'[' => depth += 1,
                        b'}' | b']' => {
                            depth -= 1;
                            if depth == 0 {
                                self.bump();
                                return Some(());
                            }
                        }
                        _ => {}
                    }
                    self.bump();
                }
            }
            _ => {
                while !matches!(self.peek(), None | Some(b',' | b'}' | b']' | b' ' | b'\t' | b'\r' | b'\n')) {
                    self.bump();
                }
                Some(())
            }
        }
    }

    fn find(&mut self, path: &[Seg]) -> Option<usize> {
        self.ws();
        let Some((first, rest)) = path.split_first() else {
            return Some(self.line);
        };
        match (self.peek()?, first) {
            (b'{', Seg::Key(want)) => {
                self.bump();
                loop {
                    self.ws();
                    if self.peek()? == b'}' {
                        return None;
                    }
                    let key_line = self.line;
                    let key = self.string()?;
                    self.ws();
                    if self.peek()? != b':' {
                        return None;
                    }
                    self.bump();
                    if &key == want {
                        return if rest.is_empty() { Some(key_line) } else { self.find(rest) };
                    }
                    self.skip_value()?;
                    self.ws();
                    if self.peek() == Some(b',') {
                        self.bump();
                    }
                }
            }
            (b'[', Seg::Index(want)) => {
                self.bump();
                for idx in 0.. {
                    self.ws();
                    if self.peek()? == b']' {
                        return None;
                    }
                    if idx == *want {
                        return self.find(rest);
                    }
                    self.skip_value()?;
                    self.ws();
                    if self.peek() == Some(b',') {
                        self.bump();
                    }
                }
                None
            }
            _ => None,
        }
    }
}

/// Line of the last key in `path` (or of the element, for an index).
pub fn locate_line(text: &str, path: &[Seg]) -> Option<usize> {
    Scan {
        b: text.as_bytes(),
        i: 0,
        line: 1,
    }
    .find(path)
}
