#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "vlt/lang.hpp"

using namespace vlt;
using namespace vlt::lang;

TEST(EmbedToken, Deterministic) {
  EXPECT_TRUE(embed_token("bird", 8, 7) == embed_token("bird", 8, 7));
}

TEST(EmbedToken, DistinctTokensDiffer) {
  EXPECT_FALSE(embed_token("bird", 8, 7) == embed_token("fish", 8, 7));
  // No two tokens of the generator vocabulary collide.
  const std::vector<std::string> corpus{"none", "object", "shape", "square", "circle", "triangle", "diamond",
                                        "red", "green", "blue", "yellow", "purple", "orange", "upper-left",
                                        "upper-right", "lower-left", "lower-right", "center", "[CLS]", "[SEP]"};
  for (std::size_t i = 0; i < corpus.size(); ++i)
    for (std::size_t j = i + 1; j < corpus.size(); ++j) {
      const Tensor a = embed_token(corpus[i], 32, 0), b = embed_token(corpus[j], 32, 0);
      double dot = 0;
      for (std::size_t k = 0; k < 32; ++k) dot += a[k] * b[k];
      EXPECT_LT(std::abs(dot), 0.9) << corpus[i] << " " << corpus[j];
    }
}

TEST(EmbedToken, UnitNorm) {
  for (const char* t : {"a", "bird", "[CLS]", "lower-left"})
    for (std::size_t d : {1, 2, 8, 32}) {
      const Tensor e = embed_token(t, d, 3);
      double n = 0;
      for (double v : e.vec()) n += v * v;
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
    }
}

TEST(EmbedToken, EmptyTokenThrows) {
  EXPECT_THROW(embed_token("", 8, 0), ArgumentError);
}

TEST(Tokenize, LowerCaseWhitespacePunctuation) {
  EXPECT_EQ(tokenize("A Red, bird!  flying-high."), (std::vector<std::string>{"a", "red", "bird", "flying-high"}));
}

TEST(EncodeSentence, SingleWordIsThreeRowMean) {
  const Tensor out = encode_sentence(SentenceAnnotation::from_text("dog"), 6, 5).vector;
  const Tensor c = embed_token(kCls, 6, 5), w = embed_token("dog", 6, 5), s = embed_token(kSep, 6, 5);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(out[i], (c[i] + w[i] + s[i]) / 3.0, 1e-15);
}

TEST(EncodeSentence, WordOrderInvariant) {
  const Tensor a = encode_sentence(SentenceAnnotation::from_text("red bird in the sky"), 16, 1).vector;
  const Tensor b = encode_sentence(SentenceAnnotation::from_text("sky the bird red in"), 16, 1).vector;
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(EncodeSentence, RepeatedWordMeanOfIdenticalRows) {
  // Every row except the sentinels equals v; the mean moves toward v as N grows.
  const Tensor v = embed_token("x", 4, 0);
  const Tensor one = encode_sentence(SentenceAnnotation{{"x"}}, 4, 0).vector;
  const Tensor many = encode_sentence(SentenceAnnotation{std::vector<std::string>(1000, "x")}, 4, 0).vector;
  double d1 = 0, d2 = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    d1 += std::abs(one[i] - v[i]);
    d2 += std::abs(many[i] - v[i]);
  }
  EXPECT_LT(d2, d1 / 100.0);
}

TEST(EncodeAttributes, AllNoneGivesFourEqualSegments) {
  AttributeDictionary dict(2, 0);
  const Tensor out = encode_attributes(AttributeAnnotation("none", "none", "none", "none"), dict).vector;
  ASSERT_EQ(out.numel(), 8u);
  for (std::size_t s = 1; s < 4; ++s)
    for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(out[2 * s + i], out[i]);
}

TEST(EncodeAttributes, ConcatenationLayout) {
  AttributeDictionary dict(8, 3);
  const LanguageRepresentation r = encode_attributes(AttributeAnnotation("bicycle", "vehicle", "green", "center"), dict);
  ASSERT_EQ(r.length(), 32u);
  const Tensor v = dict.lookup("vehicle");
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(r.vector[8 + i], v[i]);
}

TEST(EncodeAttributes, SharedRootClassSegment) {
  AttributeDictionary dict(8, 3);
  const Tensor a = encode_attributes(AttributeAnnotation("cat", "animal", "black", "center"), dict).vector;
  const Tensor b = encode_attributes(AttributeAnnotation("horse", "animal", "brown", "upper-left"), dict).vector;
  for (std::size_t i = 8; i < 16; ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_NE(a[0], b[0]);
}

TEST(EncodeAttributes, LengthAlwaysFourD) {
  for (std::size_t d : {1, 3, 32}) {
    AttributeDictionary dict(d, 0);
    EXPECT_EQ(encode_attributes(AttributeAnnotation("a", "b", "c", "d"), dict).length(), 4 * d);
  }
}

TEST(Dictionary, EntryEqualsSingleWordSentence) {
  AttributeDictionary dict(8, 9);
  const Tensor e = dict.lookup("car");
  const Tensor s = encode_sentence(SentenceAnnotation{{"car"}}, 8, 9).vector;
  EXPECT_TRUE(e == s);
}

TEST(Dictionary, SerializeReloadBitIdentical) {
  AttributeDictionary dict(5, 11);
  const AttributeAnnotation a("square", "shape", "red", "lower-left");
  const Tensor before = encode_attributes(a, dict).vector;
  std::stringstream ss;
  dict.save(ss);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "d=5 seed=11");
  ss.seekg(0);
  AttributeDictionary back = AttributeDictionary::load(ss);
  EXPECT_EQ(back.size(), dict.size());
  EXPECT_TRUE(encode_attributes(a, back).vector == before);
}

TEST(Dictionary, MalformedLineIsParseError) {
  std::stringstream ss("d=3 seed=0\nred 0.1 0.2\n");
  EXPECT_THROW(AttributeDictionary::load(ss), ParseError);
}

TEST(MissingLanguage, ZeroStrategy) {
  MissingContext ctx;
  ctx.d = 4;
  ctx.attribute_space = false;
  const LanguageRepresentation r = missing_language(MissingStrategy::Zero, ctx);
  EXPECT_EQ(r.vector.vec(), (std::vector<double>{0, 0, 0, 0}));
  ctx.attribute_space = true;
  EXPECT_EQ(missing_language(MissingStrategy::Zero, ctx).length(), 16u);
}

TEST(MissingLanguage, AttributeDefaultIsCategoryObjectNoneNone) {
  AttributeDictionary dict(6, 2);
  MissingContext ctx;
  ctx.d = 6;
  ctx.category = "car";
  ctx.dict = &dict;
  const Tensor got = missing_language(MissingStrategy::AttributeDefault, ctx).vector;
  AttributeDictionary fresh(6, 2);
  EXPECT_TRUE(got == encode_attributes(AttributeAnnotation("car", "object", "none", "none"), fresh).vector);
  ctx.category.reset();
  const Tensor unknown = missing_language(MissingStrategy::AttributeDefault, ctx).vector;
  EXPECT_TRUE(unknown == encode_attributes(AttributeAnnotation("none", "object", "none", "none"), fresh).vector);
}

TEST(MissingLanguage, TemplatePoolingOfConstantMap) {
  const Tensor fmap(Shape{6, 6, 3}, 0.75);
  const Tensor pooled = template_pooled(fmap, {0.5, 0.5, 0.4, 0.3});
  for (double v : pooled.vec()) EXPECT_NEAR(v, 0.75, 1e-15);
  MissingContext ctx;
  ctx.d = 5;
  ctx.attribute_space = false;
  ctx.template_fmap = &fmap;
  ctx.box = ops::Box{0.5, 0.5, 0.4, 0.3};
  const Tensor proj = template_projection(3, 5, 0);
  const Tensor out = missing_language(MissingStrategy::Template, ctx).vector;
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(out[j], 0.75 * (proj[j] + proj[5 + j] + proj[10 + j]), 1e-14);
}

TEST(MissingLanguage, TemplateWithoutBoxThrows) {
  const Tensor fmap(Shape{4, 4, 3}, 1.0);
  MissingContext ctx;
  ctx.template_fmap = &fmap;
  EXPECT_THROW(missing_language(MissingStrategy::Template, ctx), ArgumentError);
}

TEST(MissingLanguage, ParseStrategy) {
  EXPECT_EQ(parse_missing_strategy("zero"), MissingStrategy::Zero);
  EXPECT_EQ(parse_missing_strategy("template"), MissingStrategy::Template);
  EXPECT_EQ(parse_missing_strategy("attribute-default"), MissingStrategy::AttributeDefault);
  EXPECT_THROW(parse_missing_strategy("caption"), ArgumentError);
}
