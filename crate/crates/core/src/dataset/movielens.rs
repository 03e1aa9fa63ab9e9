//! MovieLens-1M `::`-delimited files.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::interactions::{InteractionDataset, RawRating, SplitOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub split: SplitOptions,
}

/// Genres of every internal item id; `None` when the movie is missing from
/// the metadata file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenreTable {
    pub genres: Vec<Option<Vec<String>>>,
}

impl GenreTable {
    /// Looks up every internal item of `dataset` in movie metadata keyed by
    /// external id.
    pub fn from_metadata(dataset: &InteractionDataset, movies: &HashMap<u32, Vec<String>>) -> Self {
        GenreTable {
            genres: dataset
                .item_external_ids
                .iter()
                .map(|ext| movies.get(ext).cloned())
                .collect(),
        }
    }

    pub fn items_with(&self, genre: &str) -> Vec<usize> {
        self.genres
            .iter()
            .enumerate()
            .filter(|(_, g)| g.as_ref().is_some_and(|g| g.iter().any(|x| x == genre)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn missing(&self) -> usize {
        self.genres.iter().filter(|g| g.is_none()).count()
    }
}

/// Decodes Latin-1: every byte is its own code point.
fn latin1(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| char::from(b)).collect()
}

fn lines(bytes: &[u8]) -> impl Iterator<Item = (usize, String)> + '_ {
    bytes
        .split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, l)| (i + 1, latin1(l.strip_suffix(b"\r").unwrap_or(l))))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parses `UserID::MovieID::Rating::Timestamp` lines.
pub fn parse_ratings(bytes: &[u8], path: &Path) -> Result<Vec<RawRating>> {
    lines(bytes)
        .map(|(line, text)| {
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            let fields: Vec<&str> = text.split("::").collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 `::` fields, found {}", fields.len())));
            }
            let num = |k: usize, what: &str| -> Result<i64> {
                fields[k]
                    .trim()
                    .parse::<i64>()
                    .map_err(|e| bad(format!("{what} {:?}: {e}", fields[k])))
            };
            let user = num(0, "user id")?;
            let item = num(1, "movie id")?;
            num(2, "rating")?;
            let timestamp = num(3, "timestamp")?;
            let to_u32 = |v: i64, what: &str| u32::try_from(v).map_err(|_| bad(format!("{what} {v} out of range")));
            Ok(RawRating {
                user: to_u32(user, "user id")?,
                item: to_u32(item, "movie id")?,
                timestamp,
            })
        })
        .collect()
}

/// Parses `MovieID::Title::Genres` lines into external id -> genres.
pub fn parse_movies(bytes: &[u8], path: &Path) -> Result<HashMap<u32, Vec<String>>> {
    lines(bytes)
        .map(|(line, text)| {
            let bad = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            };
            // Titles may themselves contain "::" in principle; genres are last.
            let (head, genres) = text
                .rsplit_once("::")
                .ok_or_else(|| bad("expected `MovieID::Title::Genres`".into()))?;
            let (id, _title) = head
                .split_once("::")
                .ok_or_else(|| bad("expected `MovieID::Title::Genres`".into()))?;
            let id = id
                .trim()
                .parse::<u32>()
                .map_err(|e| bad(format!("movie id {id:?}: {e}")))?;
            let genres = genres
                .split('|')
                .map(|g| g.trim().to_string())
                .filter(|g| !g.is_empty())
                .collect();
            Ok((id, genres))
        })
        .collect()
}

/// Loads MovieLens-1M, treating every rating as an implicit positive.
pub fn load_movielens(
    ratings_path: &Path,
    movies_path: &Path,
    options: &LoadOptions,
) -> Result<(InteractionDataset, GenreTable)> {
    let ratings_bytes = fs::read(ratings_path).map_err(|e| Error::io(ratings_path, e))?;
    let ratings = parse_ratings(&ratings_bytes, ratings_path)?;
    let movies_bytes = fs::read(movies_path).map_err(|e| Error::io(movies_path, e))?;
    let movies = parse_movies(&movies_bytes, movies_path)?;
    let dataset = InteractionDataset::from_ratings(&ratings, &options.split);
    let genres = GenreTable::from_metadata(&dataset, &movies);
    Ok((dataset, genres))
}
