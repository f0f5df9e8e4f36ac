#pragma once

#include <array>
#include <stdexcept>
#include <vector>

namespace spotter::geom {

struct Point {
  double x = 0, y = 0;
};

// Center-form box, normalized image coordinates.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;
};

struct CornerBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const { return (x1 - x0) * (y1 - y0); }
};

// Closed 16-point ring: 8 points along the top boundary left->right, then 8
// along the bottom boundary right->left.
constexpr int kPolygonPoints = 16;
using Polygon16 = std::array<Point, kPolygonPoints>;

CornerBox boxToCorners(const Box& b);
Box cornersToBox(const CornerBox& c);

// Generalized IoU in (-1, 1]. If both boxes have zero area the result is 0
// and *degenerate (when given) is set.
double giou(const CornerBox& a, const CornerBox& b, bool* degenerate = nullptr);
double iou(const CornerBox& a, const CornerBox& b);

// point i = proposal center + offsets[i]; offsets must hold exactly 16 pairs.
Polygon16 reconstructPolygon(const Box& proposal, const std::vector<Point>& offsets);

double polygonArea(const std::vector<Point>& ring);  // signed shoelace
CornerBox polygonBounds(const std::vector<Point>& ring);
std::vector<Point> convexHull(std::vector<Point> pts);
bool isConvex(const std::vector<Point>& ring);
bool isSimple(const std::vector<Point>& ring);

// Intersection-over-union via convex clipping. Non-convex or self-intersecting
// rings are replaced by their convex hull (warning on self-intersection).
double polygonIou(const std::vector<Point>& a, const std::vector<Point>& b);
double polygonIou(const Polygon16& a, const Polygon16& b);

// Clips `subject` by the convex ring `clip` (Sutherland-Hodgman).
std::vector<Point> clipConvex(const std::vector<Point>& subject, const std::vector<Point>& clip);

inline std::vector<Point> toRing(const Polygon16& p) { return {p.begin(), p.end()}; }

}  // namespace spotter::geom
