#include "spotter/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace spotter::geom {

CornerBox boxToCorners(const Box& b) {
  return {b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2};
}

Box cornersToBox(const CornerBox& c) {
  return {(c.x0 + c.x1) / 2, (c.y0 + c.y1) / 2, c.x1 - c.x0, c.y1 - c.y0};
}

double iou(const CornerBox& a, const CornerBox& b) {
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni <= 0 ? 0.0 : inter / uni;
}

double giou(const CornerBox& a, const CornerBox& b, bool* degenerate) {
  if (degenerate) *degenerate = false;
  const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  const double cw = std::max(a.x1, b.x1) - std::min(a.x0, b.x0);
  const double ch = std::max(a.y1, b.y1) - std::min(a.y0, b.y0);
  const double enclose = cw * ch;
  const double iouv = inter / uni;
  if (enclose <= 0) return iouv;
  return iouv - (enclose - uni) / enclose;
}

Polygon16 reconstructPolygon(const Box& proposal, const std::vector<Point>& offsets) {
  if ((int)offsets.size() != kPolygonPoints)
    throw std::invalid_argument("reconstructPolygon: expected 16 offset pairs, got " +
                                std::to_string(offsets.size()));
  Polygon16 out;
  for (int i = 0; i < kPolygonPoints; ++i)
    out[i] = {proposal.cx + offsets[i].x, proposal.cy + offsets[i].y};
  return out;
}

double polygonArea(const std::vector<Point>& ring) {
  double s = 0;
  const size_t n = ring.size();
  for (size_t i = 0; i < n; ++i) {
    const Point& p = ring[i];
    const Point& q = ring[(i + 1) % n];
    s += p.x * q.y - q.x * p.y;
  }
  return s / 2;
}

CornerBox polygonBounds(const std::vector<Point>& ring) {
  CornerBox b{ring[0].x, ring[0].y, ring[0].x, ring[0].y};
  for (const auto& p : ring) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

namespace {
double cross(const Point& o, const Point& a, const Point& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool segmentsIntersect(const Point& a, const Point& b, const Point& c, const Point& d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b);
  const double d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
         ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}
}  // namespace

std::vector<Point> convexHull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  const size_t n = pts.size();
  if (n < 3) return pts;
  std::vector<Point> hull(2 * n);
  size_t k = 0;
  for (size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  const size_t lower = k + 1;
  for (size_t i = n - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;  // counterclockwise
}

bool isConvex(const std::vector<Point>& ring) {
  const size_t n = ring.size();
  if (n < 3) return false;
  int sign = 0;
  for (size_t i = 0; i < n; ++i) {
    const double c = cross(ring[i], ring[(i + 1) % n], ring[(i + 2) % n]);
    if (c != 0) {
      const int s = c > 0 ? 1 : -1;
      if (sign == 0) sign = s;
      else if (s != sign) return false;
    }
  }
  return sign != 0;
}

bool isSimple(const std::vector<Point>& ring) {
  const size_t n = ring.size();
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      // skip adjacent edges (share a vertex)
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segmentsIntersect(ring[i], ring[(i + 1) % n], ring[j], ring[(j + 1) % n])) return false;
    }
  }
  return true;
}

std::vector<Point> clipConvex(const std::vector<Point>& subject, const std::vector<Point>& clip) {
  std::vector<Point> out = subject;
  const size_t m = clip.size();
  // ensure clip is counterclockwise so "inside" is left of each edge
  std::vector<Point> cc = clip;
  if (polygonArea(cc) < 0) std::reverse(cc.begin(), cc.end());
  for (size_t e = 0; e < m && !out.empty(); ++e) {
    const Point a = cc[e];
    const Point b = cc[(e + 1) % m];
    std::vector<Point> in;
    in.swap(out);
    const size_t n = in.size();
    for (size_t i = 0; i < n; ++i) {
      const Point& p = in[i];
      const Point& q = in[(i + 1) % n];
      const double sp = cross(a, b, p);
      const double sq = cross(a, b, q);
      if (sp >= 0) out.push_back(p);
      if ((sp > 0 && sq < 0) || (sp < 0 && sq > 0)) {
        const double t = sp / (sp - sq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return out;
}

namespace {
std::vector<Point> normalizeRing(const std::vector<Point>& ring) {
  if (ring.size() >= 3 && isSimple(ring)) {
    if (isConvex(ring)) return ring;
    return convexHull(ring);
  }
  static int warned = 0;
  if (warned++ < 5)
    std::fprintf(stderr, "[geometry] warning: self-intersecting polygon repaired by convex hull%s\n",
                 warned == 5 ? " (further warnings suppressed)" : "");
  return convexHull(ring);
}
}  // namespace

double polygonIou(const std::vector<Point>& a, const std::vector<Point>& b) {
  std::vector<Point> ca = normalizeRing(a);
  std::vector<Point> cb = normalizeRing(b);
  if (ca.size() < 3 || cb.size() < 3) return 0.0;
  const double areaA = std::fabs(polygonArea(ca));
  const double areaB = std::fabs(polygonArea(cb));
  const auto inter = clipConvex(ca, cb);
  const double areaI = inter.size() < 3 ? 0.0 : std::fabs(polygonArea(inter));
  const double uni = areaA + areaB - areaI;
  return uni <= 0 ? 0.0 : areaI / uni;
}

double polygonIou(const Polygon16& a, const Polygon16& b) {
  return polygonIou(toRing(a), toRing(b));
}

}  // namespace spotter::geom
