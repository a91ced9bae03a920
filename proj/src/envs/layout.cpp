#include <deque>
#include <fstream>
#include <sstream>

#include "projiql/envs.hpp"
#include "projiql/errors.hpp"

namespace projiql::envs {

Layout Layout::parse(std::string_view text) {
  std::vector<std::string> lines;
  std::string current;
  for (char ch : text) {
    if (ch == '\n') {
      lines.push_back(current);
      current.clear();
    } else if (ch != '\r') {
      current.push_back(ch);
    }
  }
  if (!current.empty()) lines.push_back(current);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ParseError("empty maze layout", 1, 1);

  Layout out;
  out.rows = static_cast<int>(lines.size());
  out.cols = static_cast<int>(lines.front().size());
  if (out.cols == 0) throw ParseError("empty maze row", 1, 1);
  out.walls.assign(static_cast<std::size_t>(out.rows * out.cols), false);

  bool have_start = false;
  bool have_goal = false;
  for (int r = 0; r < out.rows; ++r) {
    const std::string& line = lines[static_cast<std::size_t>(r)];
    if (static_cast<int>(line.size()) != out.cols) {
      const int col = std::min(static_cast<int>(line.size()), out.cols) + 1;
      throw ParseError("maze row has " + std::to_string(line.size()) + " cells, expected " +
                           std::to_string(out.cols),
                       r + 1, col);
    }
    for (int c = 0; c < out.cols; ++c) {
      const char ch = line[static_cast<std::size_t>(c)];
      switch (ch) {
        case '#':
          out.walls[static_cast<std::size_t>(r * out.cols + c)] = true;
          break;
        case '.':
          break;
        case 'S':
          if (have_start) throw ParseError("second start marker", r + 1, c + 1);
          have_start = true;
          out.start = {r, c};
          break;
        case 'G':
          if (have_goal) throw ParseError("second goal marker", r + 1, c + 1);
          have_goal = true;
          out.goal = {r, c};
          break;
        default:
          throw ParseError(std::string("unexpected character '") + ch + "' in maze", r + 1, c + 1);
      }
    }
  }
  if (!have_start) throw ParseError("maze has no start marker", out.rows, 1);
  if (!have_goal) throw ParseError("maze has no goal marker", out.rows, 1);
  return out;
}

Layout Layout::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open maze file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

bool Layout::is_wall(int row, int col) const {
  if (row < 0 || col < 0 || row >= rows || col >= cols) return true;
  return walls[static_cast<std::size_t>(row * cols + col)];
}

std::vector<Cell> Layout::free_cells() const {
  std::vector<Cell> out;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (!is_wall(r, c)) out.push_back({r, c});
  return out;
}

std::string Layout::to_string() const {
  std::string out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (Cell{r, c} == start) out.push_back('S');
      else if (Cell{r, c} == goal) out.push_back('G');
      else out.push_back(is_wall(r, c) ? '#' : '.');
    }
    out.push_back('\n');
  }
  return out;
}

std::vector<int> bfs_distances(const Layout& layout, Cell from) {
  std::vector<int> dist(static_cast<std::size_t>(layout.rows * layout.cols), -1);
  if (layout.is_wall(from)) return dist;
  std::deque<Cell> queue{from};
  dist[static_cast<std::size_t>(from.row * layout.cols + from.col)] = 0;
  constexpr int dr[4] = {-1, 0, 1, 0};
  constexpr int dc[4] = {0, 1, 0, -1};
  while (!queue.empty()) {
    const Cell cur = queue.front();
    queue.pop_front();
    const int d = dist[static_cast<std::size_t>(cur.row * layout.cols + cur.col)];
    for (int k = 0; k < 4; ++k) {
      const Cell next{cur.row + dr[k], cur.col + dc[k]};
      if (layout.is_wall(next)) continue;
      int& slot = dist[static_cast<std::size_t>(next.row * layout.cols + next.col)];
      if (slot >= 0) continue;
      slot = d + 1;
      queue.push_back(next);
    }
  }
  return dist;
}

}  // namespace projiql::envs
