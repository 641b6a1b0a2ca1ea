//! Default card record, layout id 1.
//!
//! | field                | offset | len | encoding          |
//! |----------------------|-------:|----:|-------------------|
//! | `layout_id`          | 0      | 2   | UINT-LE           |
//! | `personal_id`        | 2      | 4   | UINT-LE           |
//! | `expiry_date`        | 6      | 2   | DATE-D2000        |
//! | `issue_number`       | 8      | 1   | UINT-LE           |
//! | `holder_type`        | 9      | 1   | UINT-LE           |
//! | `flags`              | 10     | 1   | BITSET (bit0 = locked) |
//! | `meal_plan`          | 11     | 1   | UINT-LE (plan code) |
//! | `restaurant_account` | 12     | 4   | MONEY-CENTS       |
//! | `service_account_1`  | 16     | 4   | MONEY-CENTS       |
//! | `tax_payment_record` | 20     | 4   | UINT-LE (date low 16, status high 16) |
//! | `medical_record_1`   | 24     | 8   | OPAQUE            |
//! | `data_access_block`  | 32     | 2   | BITSET            |
//! | `gate_list`          | 34     | 8   | BITSET (gates 0..63) |
//! | `schedule`           | 42     | 14  | QUARTER-HOUR-PAIR x7, Monday first |

use std::sync::OnceLock;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::codec::{date_epoch, decode_field, encode_field, FieldValue, Window};
use crate::error::{Error, Result};
use crate::image::TagImage;
use crate::layout::{define_layout, Encoding, FieldSpec, Layout};

pub const LAYOUT_ID: u16 = 1;

pub const LAYOUT_ID_FIELD: &str = "layout_id";
pub const PERSONAL_ID: &str = "personal_id";
pub const EXPIRY_DATE: &str = "expiry_date";
pub const ISSUE_NUMBER: &str = "issue_number";
pub const HOLDER_TYPE: &str = "holder_type";
pub const FLAGS: &str = "flags";
pub const MEAL_PLAN: &str = "meal_plan";
pub const RESTAURANT_ACCOUNT: &str = "restaurant_account";
pub const SERVICE_ACCOUNT_1: &str = "service_account_1";
pub const TAX_PAYMENT_RECORD: &str = "tax_payment_record";
pub const MEDICAL_RECORD_1: &str = "medical_record_1";
pub const DATA_ACCESS_BLOCK: &str = "data_access_block";
pub const GATE_LIST: &str = "gate_list";
pub const SCHEDULE: &str = "schedule";

pub const FLAG_LOCKED: u8 = 0x01;

pub fn layout() -> &'static Layout {
    static LAYOUT: OnceLock<Layout> = OnceLock::new();
    LAYOUT.get_or_init(|| {
        use Encoding::*;
        define_layout(
            vec![
                FieldSpec::new(LAYOUT_ID_FIELD, 0, 2, UintLe),
                FieldSpec::new(PERSONAL_ID, 2, 4, UintLe),
                FieldSpec::new(EXPIRY_DATE, 6, 2, DateD2000),
                FieldSpec::new(ISSUE_NUMBER, 8, 1, UintLe),
                FieldSpec::new(HOLDER_TYPE, 9, 1, UintLe),
                FieldSpec::new(FLAGS, 10, 1, Bitset),
                FieldSpec::new(MEAL_PLAN, 11, 1, UintLe),
                FieldSpec::new(RESTAURANT_ACCOUNT, 12, 4, MoneyCents),
                FieldSpec::new(SERVICE_ACCOUNT_1, 16, 4, MoneyCents),
                FieldSpec::new(TAX_PAYMENT_RECORD, 20, 4, UintLe),
                FieldSpec::new(MEDICAL_RECORD_1, 24, 8, Opaque),
                FieldSpec::new(DATA_ACCESS_BLOCK, 32, 2, Bitset),
                FieldSpec::new(GATE_LIST, 34, 8, Bitset),
                FieldSpec::new(SCHEDULE, 42, 14, QuarterHourPair),
            ],
            LAYOUT_ID,
        )
        .expect("default layout is valid")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HolderType {
    Personnel = 0,
    Student = 1,
    Visitor = 2,
}

impl HolderType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HolderType::Personnel),
            1 => Some(HolderType::Student),
            2 => Some(HolderType::Visitor),
            _ => None,
        }
    }
}

/// Seven daily windows, Monday first.
pub type WeekSchedule = [Window; 7];

pub const ALL_WEEK: WeekSchedule = [Window::ALL_DAY; 7];
pub const NO_ACCESS: WeekSchedule = [Window::NONE; 7];

/// Tax payment record: last payment date in the low 16 bits, status bits in the high 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxRecord {
    pub last_payment: NaiveDate,
    pub status: u16,
}

impl TaxRecord {
    pub fn pack(self) -> Result<u64> {
        let days = u16::try_from(self.last_payment.signed_duration_since(date_epoch()).num_days())
            .map_err(|_| Error::ValueOverflow(TAX_PAYMENT_RECORD.into()))?;
        Ok(u64::from(days) | u64::from(self.status) << 16)
    }

    pub fn unpack(raw: u64) -> Self {
        Self {
            last_payment: date_epoch() + Duration::days((raw & 0xFFFF) as i64),
            status: (raw >> 16) as u16,
        }
    }
}

/// Everything the default layout stores, in typed form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardRecord {
    pub personal_id: u32,
    pub expiry: NaiveDate,
    pub issue_number: u8,
    pub holder_type: HolderType,
    pub locked: bool,
    pub meal_plan: u8,
    pub restaurant_cents: u32,
    pub service_cents: u32,
    pub tax: TaxRecord,
    pub medical: [u8; 8],
    pub data_access: u16,
    pub gates: u64,
    pub schedule: WeekSchedule,
}

impl CardRecord {
    pub fn new(personal_id: u32, holder_type: HolderType, expiry: NaiveDate) -> Self {
        Self {
            personal_id,
            expiry,
            issue_number: 1,
            holder_type,
            locked: false,
            meal_plan: 0,
            restaurant_cents: 0,
            service_cents: 0,
            tax: TaxRecord {
                last_payment: date_epoch(),
                status: 0,
            },
            medical: [0; 8],
            data_access: 0,
            gates: 0,
            schedule: NO_ACCESS,
        }
    }

    /// Writes every field of the record into `image`.
    pub fn write(&self, image: &TagImage) -> Result<TagImage> {
        let l = layout();
        let mut img = image.clone();
        let mut set = |name: &str, v: FieldValue| -> Result<()> {
            img = encode_field(l, &img, name, &v)?;
            Ok(())
        };
        set(LAYOUT_ID_FIELD, FieldValue::Uint(LAYOUT_ID.into()))?;
        set(PERSONAL_ID, FieldValue::Uint(self.personal_id.into()))?;
        set(EXPIRY_DATE, FieldValue::Date(self.expiry))?;
        set(ISSUE_NUMBER, FieldValue::Uint(self.issue_number.into()))?;
        set(HOLDER_TYPE, FieldValue::Uint(self.holder_type.code().into()))?;
        set(FLAGS, flags_value(self.locked))?;
        set(MEAL_PLAN, FieldValue::Uint(self.meal_plan.into()))?;
        set(RESTAURANT_ACCOUNT, FieldValue::Money(self.restaurant_cents.into()))?;
        set(SERVICE_ACCOUNT_1, FieldValue::Money(self.service_cents.into()))?;
        set(TAX_PAYMENT_RECORD, FieldValue::Uint(self.tax.pack()?))?;
        set(MEDICAL_RECORD_1, FieldValue::Opaque(self.medical.to_vec()))?;
        set(
            DATA_ACCESS_BLOCK,
            FieldValue::Bits(self.data_access.to_le_bytes().to_vec()),
        )?;
        set(GATE_LIST, gates_value(self.gates))?;
        set(SCHEDULE, schedule_value(&self.schedule))?;
        Ok(img)
    }

    /// Reads a record back. Fails only if the holder type byte is unknown.
    pub fn read(image: &TagImage) -> Result<Self> {
        let l = layout();
        let get = |name: &str| decode_field(l, image, name).expect("default layout field");
        let uint = |name: &str| get(name).as_uint().unwrap();
        let holder_type =
            HolderType::from_code(uint(HOLDER_TYPE) as u8).ok_or_else(|| Error::ValueOverflow(HOLDER_TYPE.into()))?;
        let mut medical = [0; 8];
        if let FieldValue::Opaque(b) = get(MEDICAL_RECORD_1) {
            medical.copy_from_slice(&b);
        }
        let access = get(DATA_ACCESS_BLOCK);
        let access = access.as_bits().unwrap();
        Ok(Self {
            personal_id: uint(PERSONAL_ID) as u32,
            expiry: get(EXPIRY_DATE).as_date().unwrap(),
            issue_number: uint(ISSUE_NUMBER) as u8,
            holder_type,
            locked: is_locked(image),
            meal_plan: uint(MEAL_PLAN) as u8,
            restaurant_cents: get(RESTAURANT_ACCOUNT).as_money().unwrap() as u32,
            service_cents: get(SERVICE_ACCOUNT_1).as_money().unwrap() as u32,
            tax: TaxRecord::unpack(uint(TAX_PAYMENT_RECORD)),
            medical,
            data_access: u16::from_le_bytes([access[0], access[1]]),
            gates: gates(image),
            schedule: schedule(image),
        })
    }
}

pub fn flags_value(locked: bool) -> FieldValue {
    FieldValue::Bits(vec![if locked { FLAG_LOCKED } else { 0 }])
}

pub fn gates_value(gates: u64) -> FieldValue {
    FieldValue::Bits(gates.to_le_bytes().to_vec())
}

pub fn schedule_value(schedule: &WeekSchedule) -> FieldValue {
    FieldValue::Schedule(schedule.to_vec())
}

pub fn is_locked(image: &TagImage) -> bool {
    image.bytes()[layout().field(FLAGS).unwrap().offset] & FLAG_LOCKED != 0
}

/// Gate list as a 64-bit mask, bit `g` = gate `g`.
pub fn gates(image: &TagImage) -> u64 {
    let r = layout().field(GATE_LIST).unwrap().range();
    u64::from_le_bytes(image.bytes()[r].try_into().unwrap())
}

pub fn schedule(image: &TagImage) -> WeekSchedule {
    let r = layout().field(SCHEDULE).unwrap().range();
    let b = &image.bytes()[r];
    std::array::from_fn(|d| Window::new(b[2 * d], b[2 * d + 1]))
}
