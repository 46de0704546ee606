// Client-side template validation, mirroring the server's placeholder rules:
// at most one {CLASS} per template, and none at all in attribute-only pools.

export interface TemplateIssue {
  key: string;
  index: number;
  template: string;
  message: string;
}

const PLACEHOLDER = "{CLASS}";

export function countPlaceholders(template: string): number {
  return template.split(PLACEHOLDER).length - 1;
}

export function validateCatalog(
  templates: Record<string, string[]>,
  compose: string,
): TemplateIssue[] {
  const issues: TemplateIssue[] = [];
  const keys = Object.keys(templates);
  if (keys.length === 0) {
    issues.push({ key: "", index: -1, template: "", message: "catalog has no template pools" });
  }
  for (const key of keys) {
    const pool = templates[key] ?? [];
    if (!key.trim()) {
      issues.push({ key, index: -1, template: "", message: "pool key must be non-empty" });
    }
    if (pool.length === 0) {
      issues.push({ key, index: -1, template: "", message: "pool must hold at least one template" });
    }
    pool.forEach((template, index) => {
      if (!template.trim()) {
        issues.push({ key, index, template, message: "template must be non-empty" });
        return;
      }
      const count = countPlaceholders(template);
      if (count > 1) {
        issues.push({
          key, index, template,
          message: `template holds ${count} ${PLACEHOLDER} placeholders; at most one is allowed`,
        });
      }
      if (compose === "attribute_only" && count !== 0) {
        issues.push({
          key, index, template,
          message: `attribute-only templates must not carry ${PLACEHOLDER}`,
        });
      }
    });
  }
  return issues;
}
