/**
 * Schema-generated data entry.
 *
 * The server sends a form model with its jobs (one widget per schema field,
 * lists as repeatable groups); this renders it to live DOM and reads an
 * outcome document back out. Client-side checks mirror the widget
 * constraints but are advisory only: the server revalidates everything and
 * its verdict is the one that counts.
 */

import { FormModelDoc, Violation, WidgetDoc } from "./api.js";
import { el } from "./dom.js";

interface Reading {
  present: boolean;
  value: unknown;
}

interface Field {
  element: HTMLElement;
  read(): Reading;
  problems(path: string): Violation[];
}

export interface RenderedForm {
  root: HTMLElement;
  /** The outcome document as currently filled in. */
  read(): Record<string, unknown>;
  /** Advisory client-side violations, mirroring the widget constraints. */
  problems(): Violation[];
}

export function renderForm(form: FormModelDoc): RenderedForm {
  const fields = form.widgets.map((w) => ({ widget: w, field: makeField(w) }));
  const root = el("form", { class: "generated-form" });
  for (const { widget, field } of fields) {
    root.append(labelled(widget, field.element));
  }
  return {
    root,
    read() {
      const doc: Record<string, unknown> = {};
      for (const { widget, field } of fields) {
        const reading = field.read();
        if (reading.present) {
          doc[widget.label] = reading.value;
        }
      }
      return doc;
    },
    problems() {
      const out: Violation[] = [];
      for (const { widget, field } of fields) {
        out.push(...field.problems(widget.label));
      }
      return out;
    },
  };
}

function labelled(widget: WidgetDoc, input: HTMLElement): HTMLElement {
  const caption = widget.required ? widget.label : `${widget.label} (optional)`;
  return el("div", { class: "field", "data-path": widget.path },
    el("label", {}, caption), input);
}

function makeField(widget: WidgetDoc): Field {
  switch (widget["input-kind"]) {
    case "text":
      return textField(widget);
    case "integer":
    case "number":
      return numberField(widget);
    case "checkbox":
      return checkboxField();
    case "select":
      return selectField(widget);
    case "group":
      return groupField(widget);
    case "list":
      return listField(widget);
    default:
      throw new Error(`unknown widget kind ${widget["input-kind"]}`);
  }
}

function textField(widget: WidgetDoc): Field {
  const input = el("input", { type: "text", "data-path": widget.path });
  return {
    element: input,
    // empty string is a legal string value; text fields are always present
    read: () => ({ present: true, value: input.value }),
    problems: () => [],
  };
}

function numberField(widget: WidgetDoc): Field {
  const attrs: Record<string, string> = { type: "number", "data-path": widget.path };
  if (widget["input-kind"] === "number") {
    attrs["step"] = "any";
  }
  if (widget.constraints.min !== undefined) {
    attrs["min"] = String(widget.constraints.min);
  }
  if (widget.constraints.max !== undefined) {
    attrs["max"] = String(widget.constraints.max);
  }
  const input = el("input", attrs);
  const read = (): Reading => {
    if (input.value.trim() === "") {
      return { present: false, value: undefined };
    }
    const value =
      widget["input-kind"] === "integer"
        ? parseInt(input.value, 10)
        : parseFloat(input.value);
    return Number.isNaN(value)
      ? { present: false, value: undefined }
      : { present: true, value };
  };
  return {
    element: input,
    read,
    problems(path) {
      const reading = read();
      if (!reading.present) {
        return widget.required ? [{ code: "MissingRequired", path }] : [];
      }
      const value = reading.value as number;
      const { min, max } = widget.constraints;
      if ((min !== undefined && value < min) || (max !== undefined && value > max)) {
        return [{ code: "BoundViolation", path }];
      }
      return [];
    },
  };
}

function checkboxField(): Field {
  const input = el("input", { type: "checkbox" });
  return {
    element: input,
    read: () => ({ present: true, value: input.checked }),
    problems: () => [],
  };
}

function selectField(widget: WidgetDoc): Field {
  const select = el("select", {});
  for (const option of widget.options ?? []) {
    select.append(el("option", { value: option }, option));
  }
  return {
    element: select,
    read: () => ({ present: true, value: select.value }),
    problems: () => [],
  };
}

function groupField(widget: WidgetDoc): Field {
  const children = (widget.children ?? []).map((w) => ({ widget: w, field: makeField(w) }));
  const box = el("fieldset", { class: "group" });
  for (const { widget: w, field } of children) {
    box.append(labelled(w, field.element));
  }
  return {
    element: box,
    read() {
      const value: Record<string, unknown> = {};
      for (const { widget: w, field } of children) {
        const reading = field.read();
        if (reading.present) {
          value[w.label] = reading.value;
        }
      }
      return { present: true, value };
    },
    problems(path) {
      return children.flatMap(({ widget: w, field }) =>
        field.problems(`${path}.${w.label}`));
    },
  };
}

function listField(widget: WidgetDoc): Field {
  const itemTemplate = (widget.children ?? [])[0];
  if (!itemTemplate) {
    throw new Error(`list widget ${widget.path} has no item template`);
  }
  const minItems = widget.constraints.minItems ?? 0;
  const maxItems = widget.constraints.maxItems;
  const rows: { field: Field; element: HTMLElement }[] = [];
  const rowsBox = el("div", { class: "rows" });
  const addButton = el("button", { type: "button", class: "add-row" }, "add row");
  const box = el("div", { class: "list", "data-path": widget.path }, rowsBox, addButton);

  function refreshButtons() {
    addButton.disabled = maxItems !== undefined && rows.length >= maxItems;
    for (const row of rows) {
      const remove = row.element.querySelector("button.remove-row") as HTMLButtonElement;
      remove.disabled = rows.length <= minItems;
    }
  }

  function addRow() {
    const field = makeField(itemTemplate!);
    const remove = el("button", { type: "button", class: "remove-row" }, "remove");
    const rowEl = el("div", { class: "row" }, field.element, remove);
    const row = { field, element: rowEl };
    remove.addEventListener("click", () => {
      if (rows.length <= minItems) {
        return;
      }
      rows.splice(rows.indexOf(row), 1);
      rowEl.remove();
      refreshButtons();
    });
    rows.push(row);
    rowsBox.append(rowEl);
    refreshButtons();
  }

  addButton.addEventListener("click", () => {
    if (maxItems === undefined || rows.length < maxItems) {
      addRow();
    }
  });
  for (let i = 0; i < minItems; i++) {
    addRow();
  }
  refreshButtons();

  return {
    element: box,
    read: () => ({
      present: true,
      value: rows.map((row) => row.field.read().value),
    }),
    problems(path) {
      return rows.flatMap((row, i) => row.field.problems(`${path}[${i}]`));
    },
  };
}
